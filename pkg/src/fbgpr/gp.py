"""Exact Gaussian-process numerics: evidence, its gradient, prediction, ML-II."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.linalg import lapack, solve_triangular

from .kernels import (
    KernelExpr,
    ThetaVector,
    _as_eta,
    eval_cross_matrix,
    eval_kernel_matrix,
    eval_test_diag,
    kernel_and_grad_operator,
    noise_variance,
)

__all__ = [
    "CholeskyFactor",
    "GPPosteriorGaussian",
    "ML2Result",
    "NotPositiveDefiniteError",
    "cholesky_with_jitter",
    "grad_log_marginal",
    "log_marginal_likelihood",
    "log_marginal_and_grad",
    "ml2_optimize",
    "predictive_posterior",
]

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)
_LOG_2PI = math.log(2.0 * math.pi)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky failed at every jitter level.

    Attributes
    ----------
    pivot : int
        1-based index of the failing leading minor at the last attempt.
    """

    def __init__(self, msg, pivot):
        super().__init__(msg)
        self.pivot = pivot


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower factor ``L`` with ``L @ L.T == A + jitter * I``."""

    L: np.ndarray
    jitter: float

    def solve(self, b):
        z = solve_triangular(self.L, b, lower=True, check_finite=False)
        return solve_triangular(self.L, z, lower=True, trans="T", check_finite=False)

    def inverse(self):
        inv, info = lapack.dpotri(self.L, lower=1)
        if info != 0:
            raise np.linalg.LinAlgError(f"dpotri failed with info={info}")
        inv = np.tril(inv)
        return inv + np.tril(inv, -1).T

    def logdet(self):
        return 2.0 * np.sum(np.log(np.diag(self.L)))


def cholesky_with_jitter(A, ladder=JITTER_LADDER) -> CholeskyFactor:
    """Cholesky factor of a symmetric matrix, adding diagonal jitter if needed.

    Jitter levels are multiples of the mean diagonal entry, tried in order.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefiniteError("matrix has non-finite entries", pivot=0)
    scale = float(np.mean(np.diag(A)))
    pivot = 0
    for rel in ladder:
        jitter = rel * scale if rel > 0 else 0.0
        if rel > 0 and not jitter > 0:
            break
        M = A + jitter * np.eye(A.shape[0]) if jitter else A
        c, info = lapack.dpotrf(M, lower=1, clean=1)
        if info == 0:
            return CholeskyFactor(c, jitter)
        pivot = int(info)
    raise NotPositiveDefiniteError(
        f"matrix is not positive definite (failing pivot {pivot})", pivot=pivot
    )


def _noisy_factor(k, eta, X):
    K = eval_kernel_matrix(k, eta, X, include_noise=False)
    K[np.diag_indices_from(K)] += noise_variance(k, eta)
    return cholesky_with_jitter(K)


def log_marginal_likelihood(k: KernelExpr, theta, X, y) -> float:
    """``log N(y | 0, K + n^2 I)`` evaluated through the Cholesky factor."""
    eta = _as_eta(theta)
    y = np.asarray(y, dtype=float).reshape(-1)
    chol = _noisy_factor(k, eta, X)
    z = solve_triangular(chol.L, y, lower=True, check_finite=False)
    return float(
        -0.5 * z @ z - np.sum(np.log(np.diag(chol.L))) - 0.5 * y.size * _LOG_2PI
    )


def log_marginal_and_grad(k: KernelExpr, theta, X, y):
    """Log evidence and its gradient with respect to the log hyperparameters.

    Uses ``d/d eta_j = 1/2 tr((a a^T - K^-1) dK/d eta_j)`` with ``a = K^-1 y``.

    Returns
    -------
    value : float
    grad : ndarray, shape (J,)
    chol : CholeskyFactor
    """
    eta = _as_eta(theta)
    y = np.asarray(y, dtype=float).reshape(-1)
    K, dK = kernel_and_grad_operator(k, eta, X)
    chol = cholesky_with_jitter(K)
    alpha = chol.solve(y)
    value = float(
        -0.5 * y @ alpha - np.sum(np.log(np.diag(chol.L))) - 0.5 * y.size * _LOG_2PI
    )
    W = np.outer(alpha, alpha)
    W -= chol.inverse()
    grad = 0.5 * dK.contract(W)
    return value, grad, chol


def grad_log_marginal(k: KernelExpr, theta, X, y) -> np.ndarray:
    return log_marginal_and_grad(k, theta, X, y)[1]


@dataclass(frozen=True)
class GPPosteriorGaussian:
    """Posterior over latent test values for fixed hyperparameters.

    ``cov`` is only filled when the full covariance was requested; ``var``
    always holds its diagonal. Neither includes observation noise.
    """

    mean: np.ndarray
    var: np.ndarray
    noise_variance: float
    cov: np.ndarray | None = None
    jitter: float = 0.0


def predictive_posterior(
    k: KernelExpr, theta, X, y, Xstar, full_cov: bool = True
) -> GPPosteriorGaussian:
    """GP predictive mean and covariance of ``f*`` given training data."""
    eta = _as_eta(theta)
    y = np.asarray(y, dtype=float).reshape(-1)
    chol = _noisy_factor(k, eta, X)
    Ks = eval_cross_matrix(k, eta, X, Xstar)
    alpha = chol.solve(y)
    mean = Ks @ alpha
    V = solve_triangular(chol.L, Ks.T, lower=True, check_finite=False)
    if full_cov:
        Kss = eval_kernel_matrix(k, eta, Xstar, include_noise=False)
        cov = Kss - V.T @ V
        cov = 0.5 * (cov + cov.T)
        prior_diag = np.diag(Kss)
        var = np.diag(cov).copy()
    else:
        cov = None
        prior_diag = eval_test_diag(k, eta, Xstar)
        var = prior_diag - np.sum(V * V, axis=0)
    tol = 1e-8 * float(np.max(prior_diag)) if prior_diag.size else 0.0
    if np.any(var < -tol):
        logger.warning(
            "predictive variance below round-off tolerance (min %.3g)", var.min()
        )
    var = np.maximum(var, 0.0)
    if cov is not None:
        cov[np.diag_indices_from(cov)] = var
    return GPPosteriorGaussian(mean, var, noise_variance(k, eta), cov, chol.jitter)


# --------------------------------------------------------------------------
# ML-II
# --------------------------------------------------------------------------


@dataclass
class ML2Result:
    theta: ThetaVector
    log_marginal: float
    restarts: list = field(default_factory=list)
    best_restart: int = 0


def ml2_optimize(
    k: KernelExpr,
    X,
    y,
    restarts: int = 5,
    seed: int | None = 0,
    init_std: float = 3.0,
    bound: float = 20.0,
    gtol: float = 1e-6,
    maxiter: int = 1000,
    scale_targets: bool = True,
) -> ML2Result:
    """Type-II maximum likelihood with random restarts.

    The first restart starts at ``eta = 0``; the rest draw ``eta`` from
    ``N(0, init_std^2)``. Each restart runs L-BFGS-B on the negative log
    evidence with ``|eta| <= bound``. The best end point wins; ties go to
    the earliest restart.

    With ``scale_targets`` the search runs on ``y / c`` with ``c`` the root
    mean square of ``y``. Dividing ``y`` by ``c`` is the same model with
    every amplitude and noise slot shifted by ``-log c``, so the optimum is
    mapped back exactly; starts and bounds are relative to that scale.
    Reported values (end points, evidence) are always for the raw ``y``.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    J = k.n_params
    starts = [np.zeros(J)] + [rng.normal(0.0, init_std, J) for _ in range(restarts - 1)]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    shift = np.zeros(J)
    log_c = 0.0
    if scale_targets:
        c = float(np.sqrt(np.mean(y**2)))
        if c > 0 and np.isfinite(c):
            log_c = math.log(c)
            for j, name in enumerate(k.names):
                if name.startswith(("s_", "n_")):
                    shift[j] = log_c
            # exact only if every term carries a free amplitude or noise slot
            probe = X[: min(len(X), 5)]
            K0 = eval_kernel_matrix(k, np.zeros(J), probe)
            K1 = eval_kernel_matrix(k, shift, probe)
            if np.allclose(K1, c**2 * K0, rtol=1e-10, atol=0.0):
                y = y / c
            else:
                shift[:] = 0.0
                log_c = 0.0
    n = y.size

    def objective(eta):
        try:
            v, g, _ = log_marginal_and_grad(k, eta, X, y)
        except np.linalg.LinAlgError:
            return np.inf, np.zeros(J)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros(J)
        return -v, -g

    diagnostics = []
    best = None
    for i, eta0 in enumerate(starts):
        eta0 = np.clip(eta0, -bound, bound)
        f0, _ = objective(eta0)
        if not np.isfinite(f0):
            diagnostics.append(dict(restart=i, start=(eta0 + shift).tolist(), status="bad start"))
            continue
        res = optimize.minimize(
            objective,
            eta0,
            jac=True,
            method="L-BFGS-B",
            bounds=[(-bound, bound)] * J,
            options=dict(gtol=gtol, maxiter=maxiter),
        )
        value = -float(res.fun) - n * log_c
        diagnostics.append(
            dict(
                restart=i,
                start=(eta0 + shift).tolist(),
                eta=(res.x + shift).tolist(),
                log_marginal=value,
                iterations=int(res.nit),
                message=str(res.message),
            )
        )
        if np.isfinite(value) and (best is None or value > best[1]):
            best = (res.x + shift, value, i)
    if best is None:
        raise RuntimeError(f"all ML-II restarts failed: {diagnostics}")
    return ML2Result(ThetaVector(best[0]), best[1], diagnostics, best[2])
