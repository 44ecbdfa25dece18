"""
Type-II maximum likelihood
==========================

Fit the log hyperparameters by maximising the log evidence with random
restarts, then predict at new inputs with the selected point estimate.
"""

import numpy as np

from fbgpr import ml2_optimize, parse_kernel_expr, predictive_posterior

rng = np.random.default_rng(0)

# A noisy periodic signal with a slow drift.
X = np.sort(rng.uniform(0, 6, 60))[:, None]
y = np.sin(2 * np.pi * X[:, 0]) + 0.3 * X[:, 0] + 0.1 * rng.normal(size=60)

k = parse_kernel_expr("SE*Per + SE + Noise", input_dim=1)
fit = ml2_optimize(k, X, y, restarts=5, seed=0)
print("log evidence %.2f (restart %d)" % (fit.log_marginal, fit.best_restart))
for name, value in zip(k.names, fit.theta.theta):
    print(f"  {name:6s} {value:8.4f}")

# Every restart is kept for inspection; several usually agree.
for r in fit.restarts:
    print("restart %d: %.2f" % (r["restart"], r.get("log_marginal", np.nan)))

# Predict beyond the data. The band is the latent f, without noise.
Xs = np.linspace(6, 7, 5)[:, None]
post = predictive_posterior(k, fit.theta, X, y, Xs)
truth = np.sin(2 * np.pi * Xs[:, 0]) + 0.3 * Xs[:, 0]
for x, m, v, t in zip(Xs[:, 0], post.mean, post.var, truth):
    print(f"x={x:.2f}  mean {m:6.3f} +- {1.96 * np.sqrt(v):.3f}  truth {t:6.3f}")
