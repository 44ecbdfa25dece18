"""
Composite kernels from expressions
==================================

Kernels are written as sums and products of base kernels. Every free
hyperparameter gets a global slot name such as ``s_1`` or ``ls_2``, and the
values live in log space.
"""

import numpy as np

from fbgpr import eval_kernel_matrix, parse_kernel_expr

# The CO2 kernel: long trend, seasonal term, medium-term irregularities,
# short-term noise. Products keep a single amplitude, taken from the
# first factor.
k = parse_kernel_expr("SE + SE*Per + RQ + SE + Noise", input_dim=1)
print(k)
print("slots:", ", ".join(k.names))

# Leaf options: free the period of Per, or pin it to another value.
k_free = parse_kernel_expr("SE*Per[p=free] + Noise", input_dim=1)
print("free period:", ", ".join(k_free.names))

# ARD gives one lengthscale per input column.
k_ard = parse_kernel_expr("ARD + Noise", input_dim=3)
print("ARD:", ", ".join(k_ard.names))

# Evaluate the covariance at log hyperparameters eta (here all zero, so
# every amplitude and lengthscale is 1).
X = np.linspace(0, 3, 6)[:, None]
K = eval_kernel_matrix(k, np.zeros(k.n_params), X)
print("K is symmetric:", np.allclose(K, K.T))
print("smallest eigenvalue: %.3g" % np.linalg.eigvalsh(K).min())
