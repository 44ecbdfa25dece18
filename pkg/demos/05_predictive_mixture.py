"""
Predictive mixtures, intervals and scores
=========================================

Each hyperparameter draw gives a Gaussian prediction. The posterior
predictive is their equal-weight mixture. Its mean and variance are
closed form. The 95% band comes from sampling the mixture.
"""

import numpy as np

from fbgpr import (
    build_mixture,
    empirical_quantiles,
    mixture_moments,
    nlpd,
    parse_kernel_expr,
    rmse,
)

rng = np.random.default_rng(2)
X = rng.uniform(0, 4, (30, 1))
y = np.cos(X[:, 0]) + 0.1 * rng.normal(size=30)
Xs = np.linspace(0, 5, 8)[:, None]
ys = np.cos(Xs[:, 0])

k = parse_kernel_expr("SE + Noise", input_dim=1)
# stand-in posterior draws of (log s, log ls, log n)
draws = np.log([1.0, 1.0, 0.1]) + 0.2 * rng.normal(size=(50, 3))

mix = build_mixture(k, X, y, Xs, draws)
mean, var = mixture_moments(mix)
lo, hi = empirical_quantiles(mix, T=10_000, seed=0)
for x, m, a, b, t in zip(Xs[:, 0], mean, lo, hi, ys):
    print(f"x={x:.2f}  {m:6.3f}  [{a:6.3f}, {b:6.3f}]  truth {t:6.3f}")

r, se = rmse(mean, ys)
print(f"RMSE {r:.4f} ({se:.4f})  NLPD {nlpd(mix, ys):.3f}")
