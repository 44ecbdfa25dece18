"""Predictive mixtures over hyperparameter draws and their summaries."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .gp import predictive_posterior

__all__ = [
    "PredictiveMixture",
    "build_mixture",
    "empirical_quantiles",
    "mixture_moments",
    "nlpd",
    "rmse",
    "thin_draws",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictiveMixture:
    """Equal-weight mixture of Gaussians over the test outputs.

    ``means`` and ``variances`` have shape ``(M, N*)``. ``noise`` holds the
    observation-noise variance of each component's hyperparameters and
    ``covs`` the optional full ``(M, N*, N*)`` covariances.
    """

    means: np.ndarray
    variances: np.ndarray
    noise: np.ndarray
    covs: np.ndarray | None = None

    def __post_init__(self):
        if self.means.ndim != 2 or self.means.shape != self.variances.shape:
            raise ValueError("means and variances must share shape (M, N*)")
        if self.means.shape[0] < 1:
            raise ValueError("mixture needs at least one component")
        if np.any(self.variances < 0):
            raise ValueError("negative component variance")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def n_points(self) -> int:
        return self.means.shape[1]

    def rescale(self, scale: float, shift: float) -> "PredictiveMixture":
        """Mixture of ``scale * f + shift``."""
        covs = None if self.covs is None else self.covs * scale**2
        return PredictiveMixture(
            self.means * scale + shift,
            self.variances * scale**2,
            self.noise * scale**2,
            covs,
        )


def thin_draws(draws, M: int) -> np.ndarray:
    """Keep ``M`` rows of ``draws`` by equal-stride thinning."""
    draws = np.asarray(draws, dtype=float)
    if M >= draws.shape[0]:
        return draws
    idx = np.floor(np.arange(M) * draws.shape[0] / M).astype(int)
    return draws[idx]


def build_mixture(k, X, y, Xstar, draws, full_cov: bool = False) -> PredictiveMixture:
    """One GP predictive component per row of ``draws`` (log hyperparameters).

    Components whose covariance cannot be factorised are dropped with a
    warning.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if not np.all(np.isfinite(draws)):
        raise ValueError("draws must be finite")
    means, variances, noise, covs = [], [], [], []
    dropped = []
    for j, eta in enumerate(draws):
        try:
            post = predictive_posterior(k, eta, X, y, Xstar, full_cov=full_cov)
        except np.linalg.LinAlgError as exc:
            dropped.append(j)
            logger.warning("component %d dropped: %s", j, exc)
            continue
        means.append(post.mean)
        variances.append(post.var)
        noise.append(post.noise_variance)
        if full_cov:
            covs.append(post.cov)
    if not means:
        raise np.linalg.LinAlgError("every mixture component failed to factorise")
    return PredictiveMixture(
        np.array(means),
        np.array(variances),
        np.array(noise),
        np.array(covs) if full_cov else None,
    )


def mixture_moments(mix: PredictiveMixture, full_cov: bool | None = None):
    """Mean and covariance of the mixture.

    The covariance is the average component covariance plus the spread of
    the component means about the overall mean. Returns the full matrix when
    component covariances are stored (or ``full_cov=True``), otherwise the
    per-point variances.
    """
    mean = mix.means.mean(axis=0)
    dev = mix.means - mean
    if full_cov is None:
        full_cov = mix.covs is not None
    if full_cov:
        if mix.covs is None:
            raise ValueError("mixture was built without full covariances")
        cov = mix.covs.mean(axis=0) + dev.T @ dev / mix.n_components
        return mean, cov
    return mean, mix.variances.mean(axis=0) + np.mean(dev**2, axis=0)


def empirical_quantiles(
    mix: PredictiveMixture,
    T: int = 10_000,
    lower: float = 2.5,
    upper: float = 97.5,
    seed=None,
    include_noise: bool = False,
):
    """Quantile band per test point from ``T`` simulated mixture draws.

    Each draw picks a component uniformly and samples its Gaussian. The
    draws are sorted and the order statistics at 1-based ranks
    ``ceil(lower/100 * T)`` and ``ceil(upper/100 * T)`` are returned.
    """
    if T < 100:
        raise ValueError("T must be at least 100")
    if not 0 < lower < upper < 100:
        raise ValueError("need 0 < lower < upper < 100")
    rng = np.random.default_rng(seed)
    r_lo = math.ceil(lower / 100.0 * T)
    r_hi = math.ceil(upper / 100.0 * T)
    sd = np.sqrt(mix.variances + (mix.noise[:, None] if include_noise else 0.0))
    f_lo = np.empty(mix.n_points)
    f_hi = np.empty(mix.n_points)
    for i in range(mix.n_points):
        comp = rng.integers(mix.n_components, size=T)
        samples = mix.means[comp, i] + sd[comp, i] * rng.standard_normal(T)
        samples.sort()
        f_lo[i] = samples[r_lo - 1]
        f_hi[i] = samples[r_hi - 1]
    return f_lo, f_hi


def rmse(mean, y_test):
    """Root mean squared error and its delta-method standard error."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    y_test = np.asarray(y_test, dtype=float).reshape(-1)
    if y_test.size == 0:
        raise ValueError("empty test set")
    if mean.shape != y_test.shape:
        raise ValueError("prediction and target lengths differ")
    sq = (mean - y_test) ** 2
    value = math.sqrt(float(sq.mean()))
    if value == 0.0 or sq.size < 2:
        return value, 0.0
    se = float(np.std(sq, ddof=1)) / (2.0 * value * math.sqrt(sq.size))
    return value, se


def nlpd(mix: PredictiveMixture, y_test, include_noise: bool = True) -> float:
    """Average negative log predictive density of the test targets.

    With ``include_noise`` each component's density is over observations
    (latent variance plus that component's noise variance).
    """
    y_test = np.asarray(y_test, dtype=float).reshape(-1)
    if y_test.size != mix.n_points:
        raise ValueError("test targets and mixture disagree on N*")
    var = mix.variances + (mix.noise[:, None] if include_noise else 0.0)
    with np.errstate(divide="ignore"):
        logpdf = -0.5 * (
            np.log(2.0 * np.pi * var) + (y_test[None, :] - mix.means) ** 2 / var
        )
    log_mix = logsumexp(logpdf, axis=0) - math.log(mix.n_components)
    return float(-np.mean(log_mix))
