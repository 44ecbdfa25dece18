"""
Sampling hyperparameters with NUTS
==================================

The log joint density of the data and the log hyperparameters is sampled
with the No-U-Turn sampler. Chains are summarised with posterior means,
HPD intervals, effective sample sizes and split R-hat.
"""

import numpy as np

from fbgpr import (
    LogJointTarget,
    NutsConfig,
    PriorSpec,
    parse_kernel_expr,
    sample_nuts,
    select_prediction_chain,
    summarize_trace,
)

rng = np.random.default_rng(1)
X = rng.uniform(0, 5, (40, 1))
y = np.sin(X[:, 0]) + 0.2 * rng.normal(size=40)

k = parse_kernel_expr("SE + Noise", input_dim=1)
# vague N(0, 3) priors on every log hyperparameter
target = LogJointTarget(k, PriorSpec.default(k.n_params), X, y)

trace = sample_nuts(target, NutsConfig(chains=4, warmup=300, samples=500, seed=0))
print("step sizes:", np.round(trace.step_size, 3))
print("divergent fraction per chain:", trace.divergence_fraction())

summary = summarize_trace(trace)
print(summary.to_text())

# Predictions use one chain: the healthiest one with the highest mean
# log density.
print("prediction chain:", select_prediction_chain(trace))
