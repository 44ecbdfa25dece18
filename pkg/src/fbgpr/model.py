"""Hyperparameter priors and the unnormalised log posterior over ``eta``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .gp import log_marginal_and_grad
from .kernels import KernelExpr, _as_eta

__all__ = [
    "FlatPrior",
    "GammaOnConstrained",
    "LogJointTarget",
    "NormalInLogSpace",
    "NormalOnConstrained",
    "PriorSpec",
    "grad_log_prior",
    "log_posterior_unnorm",
    "log_prior",
    "parse_prior",
]

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NormalInLogSpace:
    """Normal prior placed directly on ``eta = log(theta)``."""

    mean: float = 0.0
    std: float = 3.0

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("std must be positive")

    def logpdf_and_grad(self, eta):
        z = (eta - self.mean) / self.std
        return -0.5 * z * z - math.log(self.std) - _HALF_LOG_2PI, -z / self.std

    def __str__(self):
        return f"normal_log({self.mean:g}, {self.std:g})"


@dataclass(frozen=True)
class GammaOnConstrained:
    """Gamma(shape, rate) on ``theta``; includes the ``+eta`` log-Jacobian."""

    shape: float = 2.0
    rate: float = 0.1

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("shape and rate must be positive")

    def logpdf_and_grad(self, eta):
        theta = math.exp(eta)
        value = (
            self.shape * math.log(self.rate)
            + (self.shape - 1.0) * eta
            - self.rate * theta
            - gammaln(self.shape)
            + eta
        )
        return value, self.shape - self.rate * theta

    def __str__(self):
        return f"gamma({self.shape:g}, {self.rate:g})"


@dataclass(frozen=True)
class NormalOnConstrained:
    """Normal(mean, std) density on ``theta`` plus the log-Jacobian."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("std must be positive")

    def logpdf_and_grad(self, eta):
        theta = math.exp(eta)
        z = (theta - self.mean) / self.std
        value = -0.5 * z * z - math.log(self.std) - _HALF_LOG_2PI + eta
        return value, -z * theta / self.std + 1.0

    def __str__(self):
        return f"normal({self.mean:g}, {self.std:g})"


@dataclass(frozen=True)
class FlatPrior:
    """Improper constant prior. Meant for tests."""

    def logpdf_and_grad(self, eta):
        return 0.0, 0.0

    def __str__(self):
        return "flat()"


_PRIOR_KINDS = {
    "normal_log": (NormalInLogSpace, 2),
    "gamma": (GammaOnConstrained, 2),
    "normal": (NormalOnConstrained, 2),
    "flat": (FlatPrior, 0),
}


def parse_prior(text: str):
    """Parse ``"normal_log(0, 3)"``, ``"gamma(2, 0.1)"``, ``"normal(m, s)"``."""
    text = text.strip()
    name, _, rest = text.partition("(")
    name = name.strip()
    if name not in _PRIOR_KINDS or not rest.endswith(")"):
        raise ValueError(f"cannot parse prior {text!r}")
    cls, nargs = _PRIOR_KINDS[name]
    body = rest[:-1].strip()
    args = [float(a) for a in body.split(",")] if body else []
    if len(args) != nargs:
        raise ValueError(f"{name} takes {nargs} arguments, got {len(args)}")
    return cls(*args)


@dataclass(frozen=True)
class PriorSpec:
    """One prior per hyperparameter slot."""

    priors: tuple

    @classmethod
    def default(cls, n_params: int, mean: float = 0.0, std: float = 3.0):
        return cls((NormalInLogSpace(mean, std),) * n_params)

    def __len__(self):
        return len(self.priors)

    def with_overrides(self, kernel: KernelExpr, overrides: dict) -> "PriorSpec":
        """Replace priors for the named slots (``{"n_6": GammaOnConstrained()}``)."""
        priors = list(self.priors)
        for name, prior in overrides.items():
            if isinstance(prior, str):
                prior = parse_prior(prior)
            priors[kernel.slot_index(name)] = prior
        return PriorSpec(tuple(priors))


def _log_prior_and_grad(spec, eta):
    eta = _as_eta(eta)
    if eta.size != len(spec):
        raise ValueError(
            f"prior has {len(spec)} slots but eta has length {eta.size}"
        )
    value = 0.0
    grad = np.empty(eta.size)
    for j, (prior, e) in enumerate(zip(spec.priors, eta)):
        v, g = prior.logpdf_and_grad(float(e))
        value += v
        grad[j] = g
    return value, grad


def log_prior(spec: PriorSpec, eta) -> float:
    return _log_prior_and_grad(spec, eta)[0]


def grad_log_prior(spec: PriorSpec, eta) -> np.ndarray:
    return _log_prior_and_grad(spec, eta)[1]


@dataclass(frozen=True)
class LogJointTarget:
    """Unnormalised log posterior ``log p(y | eta) + log p(eta)``.

    ``value_and_grad`` never raises on numerical failure: a failed
    factorisation or any non-finite term yields ``(-inf, zeros)``.
    """

    kernel: KernelExpr
    prior: PriorSpec
    X: np.ndarray
    y: np.ndarray
    cache: bool = True
    _last: list = field(default_factory=lambda: [None], compare=False, repr=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(-1))
        if len(self.prior) != self.kernel.n_params:
            raise ValueError("prior and kernel disagree on the number of slots")

    @property
    def dim(self) -> int:
        return self.kernel.n_params

    @property
    def names(self) -> tuple:
        return self.kernel.names

    def value_and_grad(self, eta):
        eta = np.asarray(eta, dtype=float)
        key = eta.tobytes()
        last = self._last[0]
        if self.cache and last is not None and last[0] == key:
            return last[1], last[2].copy()
        lp, grad = self._evaluate(eta)
        if self.cache:
            self._last[0] = (key, lp, grad.copy())
        return lp, grad

    def _evaluate(self, eta):
        if not np.all(np.isfinite(eta)):
            return -np.inf, np.zeros(eta.size)
        try:
            with np.errstate(all="ignore"):
                ll, gll, _ = log_marginal_and_grad(self.kernel, eta, self.X, self.y)
                lp, glp = _log_prior_and_grad(self.prior, eta)
        except (np.linalg.LinAlgError, OverflowError, FloatingPointError):
            return -np.inf, np.zeros(eta.size)
        value = ll + lp
        grad = gll + glp
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(eta.size)
        return float(value), grad

    def __call__(self, eta) -> float:
        return self.value_and_grad(eta)[0]


def log_posterior_unnorm(target: LogJointTarget, eta):
    """Value and gradient of the unnormalised log posterior at ``eta``."""
    return target.value_and_grad(eta)
