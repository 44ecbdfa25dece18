"""Gaussian variational inference over ``eta`` with pathwise gradients.

Two families are supported: mean-field ``N(mu, diag(exp(nu)))`` and
full-rank ``N(mu, L L^T)``. The target is any object with
``value_and_grad(eta)`` returning the log density over ``eta`` (for
:class:`~fbgpr.model.LogJointTarget` that density already contains the
change-of-variables term for priors stated on ``theta``).

The ELBO is ``E_q[log p(eta)] + H[q]`` with the entropy in closed form and
the expectation estimated from reparameterised draws
``eta = mu + sigma * z`` (or ``mu + L z``), ``z ~ N(0, I)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "ElboEstimate",
    "FullRankParams",
    "MeanFieldParams",
    "ViConfig",
    "ViResult",
    "draw_vi_samples",
    "elbo_estimate",
    "elbo_grad_estimate",
    "entropy",
    "fit_vi",
]

logger = logging.getLogger(__name__)

_HALF_LOG_2PI_E = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class MeanFieldParams:
    """``mu`` and ``nu = log(sigma^2)`` per slot."""

    mu: np.ndarray
    nu: np.ndarray

    family = "mean-field"

    @classmethod
    def standard(cls, dim):
        return cls(np.zeros(dim), np.zeros(dim))

    @property
    def dim(self):
        return self.mu.size

    @property
    def sigma(self):
        return np.exp(0.5 * self.nu)

    @property
    def cov(self):
        return np.diag(np.exp(self.nu))

    def transform(self, z):
        return self.mu + z * self.sigma

    def pack(self):
        return np.concatenate([self.mu, self.nu])

    @classmethod
    def unpack(cls, v, dim):
        return cls(v[:dim].copy(), v[dim:].copy())

    def to_dict(self):
        return dict(mu=self.mu.tolist(), nu=self.nu.tolist())


@dataclass(frozen=True)
class FullRankParams:
    """``mu`` and a lower-triangular ``L`` with positive diagonal.

    The unconstrained packing stores the strictly lower entries as they are
    and the diagonal as logs.
    """

    mu: np.ndarray
    L: np.ndarray

    family = "full-rank"

    def __post_init__(self):
        L = np.tril(np.asarray(self.L, dtype=float))
        if np.any(np.diag(L) <= 0):
            raise ValueError("L must have a strictly positive diagonal")
        object.__setattr__(self, "L", L)

    @classmethod
    def standard(cls, dim):
        return cls(np.zeros(dim), np.eye(dim))

    @property
    def dim(self):
        return self.mu.size

    @property
    def cov(self):
        return self.L @ self.L.T

    def transform(self, z):
        return self.mu + z @ self.L.T

    def pack(self):
        J = self.dim
        rows, cols = np.tril_indices(J, -1)
        return np.concatenate([self.mu, self.L[rows, cols], np.log(np.diag(self.L))])

    @classmethod
    def unpack(cls, v, dim):
        rows, cols = np.tril_indices(dim, -1)
        n_off = rows.size
        L = np.zeros((dim, dim))
        L[rows, cols] = v[dim : dim + n_off]
        L[np.diag_indices(dim)] = np.exp(v[dim + n_off :])
        return cls(v[:dim].copy(), L)

    def to_dict(self):
        return dict(mu=self.mu.tolist(), L=self.L.tolist())


def entropy(params) -> float:
    """Differential entropy of the variational Gaussian."""
    base = params.dim * _HALF_LOG_2PI_E
    if isinstance(params, MeanFieldParams):
        return base + 0.5 * float(np.sum(params.nu))
    return base + float(np.sum(np.log(np.diag(params.L))))


class ElboEstimate(NamedTuple):
    value: float
    stderr: float
    n_flagged: int


def _draw_z(seed, n, dim):
    return np.random.default_rng(seed).standard_normal((n, dim))


def _evaluate(target, params, z):
    etas = params.transform(z)
    lps = np.empty(z.shape[0])
    grads = np.empty_like(z)
    for i, eta in enumerate(etas):
        lps[i], grads[i] = target.value_and_grad(eta)
    return etas, lps, grads


def elbo_estimate(target, params, n_samples: int = 200, seed=None) -> ElboEstimate:
    """Monte Carlo ELBO with closed-form entropy.

    Draws where the target is not finite are counted in ``n_flagged`` and
    make the estimate ``-inf``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    z = _draw_z(seed, n_samples, params.dim)
    _, lps, _ = _evaluate(target, params, z)
    flagged = int(np.sum(~np.isfinite(lps)))
    if flagged:
        return ElboEstimate(-np.inf, np.inf, flagged)
    se = float(np.std(lps, ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else np.inf
    return ElboEstimate(float(np.mean(lps)) + entropy(params), se, 0)


def _grad_from_draws(params, z, grads):
    # pathwise gradient of E[f(mu + S z)] plus the entropy gradient
    M = z.shape[0]
    g_mu = grads.mean(axis=0)
    if isinstance(params, MeanFieldParams):
        g_nu = 0.5 * params.sigma * np.mean(grads * z, axis=0) + 0.5
        return np.concatenate([g_mu, g_nu])
    J = params.dim
    G = grads.T @ z / M
    G = np.tril(G)
    rows, cols = np.tril_indices(J, -1)
    diagL = np.diag(params.L)
    g_logdiag = np.diag(G) * diagL + 1.0
    return np.concatenate([g_mu, G[rows, cols], g_logdiag])


def elbo_grad_estimate(target, params, M: int = 8, seed=None):
    """Reparameterisation gradient of the ELBO.

    Returns a vector in the packed unconstrained layout of ``params``
    (``[mu, nu]`` or ``[mu, strictly-lower L, log diag L]``). Seeded the same
    way, it uses the same ``z`` draws as :func:`elbo_estimate`.

    Returns
    -------
    grad : ndarray
    n_flagged : int
        Draws whose log density was not finite; their contribution is
        dropped.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    z = _draw_z(seed, M, params.dim)
    return _grad_and_value(target, params, z)[:2]


def _grad_and_value(target, params, z):
    _, lps, grads = _evaluate(target, params, z)
    ok = np.isfinite(lps)
    flagged = int(np.sum(~ok))
    if flagged == z.shape[0]:
        return np.full(params.pack().size, np.nan), flagged, -np.inf
    g = _grad_from_draws(params, z[ok], grads[ok])
    value = float(np.mean(lps[ok])) + entropy(params)
    return g, flagged, value


@dataclass
class ViConfig:
    family: str = "full-rank"
    mc_samples: int = 8
    learning_rates: tuple = (0.01, 0.05, 0.1)
    learning_rate: float | None = None
    probe_iterations: int = 50
    decay: float = 0.9
    offset: float = 1e-16
    tau: float = 1.0
    max_iterations: int = 10000
    threshold: float = 1e-4
    check_every: int = 10
    ema_decay: float = 0.99
    monitor_samples: int = 200
    min_iterations: int = 100
    max_nan_streak: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("mean-field", "full-rank"):
            raise ValueError("family must be 'mean-field' or 'full-rank'")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")


@dataclass
class ViResult:
    params: object
    elbo_trace: np.ndarray
    iterations: int
    converged: bool
    learning_rate: float
    final_elbo: ElboEstimate | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self, thin: int = 10):
        out = dict(
            family=self.params.family,
            params=self.params.to_dict(),
            elbo_trace=[float(v) for v in self.elbo_trace[::thin]],
            elbo_trace_thin=thin,
            iterations=self.iterations,
            converged=self.converged,
            learning_rate=self.learning_rate,
        )
        if self.final_elbo is not None:
            out["final_elbo"] = self.final_elbo.value
            out["final_elbo_se"] = self.final_elbo.stderr
        return out


def _initial_params(family, dim):
    return (MeanFieldParams if family == "mean-field" else FullRankParams).standard(dim)


class _Optimizer:
    # step_k = lr * k^(-1/2 + offset) / (tau + sqrt(s_k)),
    # s_k = (1 - decay) g_k^2 + decay s_{k-1}, s_1 = g_1^2
    def __init__(self, lr, decay, offset, tau):
        self.lr, self.decay, self.offset, self.tau = lr, decay, offset, tau
        self.k = 0
        self.s = None

    def step(self, v, g):
        self.k += 1
        g2 = g * g
        self.s = g2 if self.s is None else (1.0 - self.decay) * g2 + self.decay * self.s
        rate = self.lr * self.k ** (-0.5 + self.offset) / (self.tau + np.sqrt(self.s))
        return v + rate * g


def _run(target, config, cls, dim, v0, lr, iterations, rng, stop=True):
    opt = _Optimizer(lr, config.decay, config.offset, config.tau)
    v = v0.copy()
    trace = []
    ema = v.copy()
    ema_prev = None
    nan_streak = 0
    converged = False
    it = 0
    for it in range(1, iterations + 1):
        params = cls.unpack(v, dim)
        z = rng.standard_normal((config.mc_samples, dim))
        g, _, value = _grad_and_value(target, params, z)
        if not np.all(np.isfinite(g)):
            nan_streak += 1
            trace.append(np.nan)
            if nan_streak >= config.max_nan_streak:
                raise FloatingPointError(
                    f"ELBO not finite for {nan_streak} consecutive iterations "
                    f"(iteration {it}, lr {lr})"
                )
            continue
        nan_streak = 0
        trace.append(value)
        v = opt.step(v, g)
        ema = config.ema_decay * ema + (1.0 - config.ema_decay) * v
        if stop and it % config.check_every == 0:
            if ema_prev is not None and it >= config.min_iterations:
                if np.all(np.abs(ema - ema_prev) < config.threshold):
                    converged = True
                    break
            ema_prev = ema.copy()
    return v, np.array(trace), it, converged


def fit_vi(target, config: ViConfig | None = None, init=None) -> ViResult:
    """Maximise the ELBO by stochastic gradient ascent.

    The base learning rate is picked from ``config.learning_rates`` by short
    probe runs unless ``config.learning_rate`` is given. Optimisation stops
    once every variational parameter's smoothed value moved less than
    ``config.threshold`` over ``config.check_every`` iterations.
    """
    config = config or ViConfig()
    dim = target.dim
    cls = MeanFieldParams if config.family == "mean-field" else FullRankParams
    params0 = init if init is not None else _initial_params(config.family, dim)
    v0 = params0.pack()
    seeds = np.random.SeedSequence(config.seed).spawn(3)

    lr = config.learning_rate
    probes = {}
    if lr is None:
        best = None
        for cand in config.learning_rates:
            try:
                v, _, _, _ = _run(
                    target, config, cls, dim, v0, cand, config.probe_iterations,
                    np.random.default_rng(seeds[0]), stop=False,
                )
            except FloatingPointError:
                probes[cand] = -np.inf
                continue
            est = elbo_estimate(
                target, cls.unpack(v, dim), config.monitor_samples,
                np.random.default_rng(seeds[1]),
            )
            probes[cand] = est.value
            if np.isfinite(est.value) and (best is None or est.value > best[1]):
                best = (cand, est.value)
        if best is None:
            raise FloatingPointError(f"every learning-rate probe failed: {probes}")
        lr = best[0]
        logger.debug("vi: probes %s -> lr %g", probes, lr)

    v, trace, iterations, converged = _run(
        target, config, cls, dim, v0, lr, config.max_iterations,
        np.random.default_rng(seeds[2]),
    )
    params = cls.unpack(v, dim)
    final = elbo_estimate(
        target, params, config.monitor_samples, np.random.default_rng(seeds[1])
    )
    if not converged:
        logger.warning("vi: no convergence after %d iterations", iterations)
    return ViResult(
        params, trace, iterations, converged, lr, final,
        metadata=dict(probes={str(k): v for k, v in probes.items()}),
    )


def draw_vi_samples(params, count: int, seed=None) -> np.ndarray:
    """Exact draws from the variational Gaussian, shape ``(count, J)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    z = _draw_z(seed, count, params.dim)
    return params.transform(z)
