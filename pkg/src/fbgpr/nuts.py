"""No-U-Turn sampler with an identity mass matrix.

Trajectories grow by doubling, states are picked by multinomial sampling
over the trajectory, and expansion stops on the generalised U-turn
criterion. The step size is tuned during warm-up by dual averaging.

Any object with ``value_and_grad(eta) -> (log_density, gradient)`` and a
``dim`` attribute can be sampled; a log density of ``-inf`` is treated as a
rejection.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "NutsConfig",
    "Trace",
    "find_reasonable_step_size",
    "leapfrog",
    "read_trace_csv",
    "sample_nuts",
    "select_prediction_chain",
]

logger = logging.getLogger(__name__)


@dataclass
class NutsConfig:
    chains: int = 4
    warmup: int = 500
    samples: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    max_energy_error: float = 1000.0
    unhealthy_divergence_fraction: float = 0.25

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")


@dataclass
class Trace:
    """Posterior draws of ``eta`` for several chains.

    Arrays are indexed ``[chain, draw]`` (plus a trailing slot axis for
    ``draws``).
    """

    names: tuple
    draws: np.ndarray
    lp: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    step_size: np.ndarray
    accept_stat: np.ndarray | None = None
    n_leapfrog: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def divergence_fraction(self) -> np.ndarray:
        return self.divergent.mean(axis=1)

    def healthy(self, max_fraction: float = 0.25) -> np.ndarray:
        return self.divergence_fraction() <= max_fraction

    def to_csv(self, path):
        """Write ``chain, draw, <slots...>, lp, divergent, tree_depth`` rows."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "draw", *self.names, "lp", "divergent", "tree_depth"])
            for c in range(self.n_chains):
                for d in range(self.n_draws):
                    w.writerow(
                        [c, d]
                        + [repr(float(v)) for v in self.draws[c, d]]
                        + [
                            repr(float(self.lp[c, d])),
                            int(self.divergent[c, d]),
                            int(self.tree_depth[c, d]),
                        ]
                    )

    def metadata_dict(self) -> dict:
        meta = dict(self.metadata)
        meta["slot_names"] = list(self.names)
        meta["step_size"] = [float(s) for s in self.step_size]
        meta["divergence_fraction"] = [float(f) for f in self.divergence_fraction()]
        if self.accept_stat is not None:
            meta["mean_accept_stat"] = [float(a) for a in self.accept_stat.mean(axis=1)]
        return meta

    def write_metadata(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(self.metadata_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def read_trace_csv(path, metadata_path=None) -> Trace:
    """Load a trace written by :meth:`Trace.to_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:2] != ["chain", "draw"] or header[-3:] != ["lp", "divergent", "tree_depth"]:
        raise ValueError(f"{path}: not a trace CSV (header {header})")
    names = tuple(header[2:-3])
    if not body:
        raise ValueError(f"{path}: trace has no draws")
    chains = sorted({int(r[0]) for r in body})
    n_chains = len(chains)
    n_draws = max(int(r[1]) for r in body) + 1
    J = len(names)
    draws = np.full((n_chains, n_draws, J), np.nan)
    lp = np.full((n_chains, n_draws), np.nan)
    div = np.zeros((n_chains, n_draws), dtype=bool)
    depth = np.zeros((n_chains, n_draws), dtype=int)
    index = {c: i for i, c in enumerate(chains)}
    for r in body:
        c, d = index[int(r[0])], int(r[1])
        draws[c, d] = [float(v) for v in r[2 : 2 + J]]
        lp[c, d] = float(r[2 + J])
        div[c, d] = bool(int(r[3 + J]))
        depth[c, d] = int(r[4 + J])
    meta = {}
    step = np.full(n_chains, np.nan)
    if metadata_path is not None:
        with open(metadata_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        if "step_size" in meta:
            step = np.asarray(meta["step_size"], dtype=float)
    return Trace(names, draws, lp, div, depth, step, metadata=meta)


# --------------------------------------------------------------------------
# Dynamics
# --------------------------------------------------------------------------


def leapfrog(target, eta, momentum, step_size, grad=None):
    """One leapfrog step with unit mass.

    Returns
    -------
    eta, momentum, log_density, grad
        The new state. ``log_density`` is ``-inf`` if the target failed.
    """
    if grad is None:
        _, grad = target.value_and_grad(eta)
    p = momentum + 0.5 * step_size * grad
    q = eta + step_size * p
    lp, g = target.value_and_grad(q)
    p = p + 0.5 * step_size * g
    return q, p, lp, g


@dataclass
class _State:
    q: np.ndarray
    p: np.ndarray
    lp: float
    grad: np.ndarray

    def energy(self):
        h = -self.lp + 0.5 * float(self.p @ self.p)
        return h if np.isfinite(h) else np.inf


@dataclass
class _Subtree:
    valid: bool
    end: _State = None
    propose: _State = None
    p_beg: np.ndarray = None
    p_end: np.ndarray = None
    rho: np.ndarray = None
    log_weight: float = -np.inf


def _no_u_turn(p_minus, p_plus, rho):
    return float(p_plus @ rho) > 0.0 and float(p_minus @ rho) > 0.0


class _Integrator:
    """Trajectory builder for a single transition."""

    def __init__(self, target, rng, step_size, max_energy_error):
        self.target = target
        self.rng = rng
        self.step_size = step_size
        self.max_energy_error = max_energy_error
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False

    def build(self, depth, z, direction, H0):
        if depth == 0:
            q, p, lp, g = leapfrog(
                self.target, z.q, z.p, direction * self.step_size, z.grad
            )
            new = _State(q, p, lp, g)
            self.n_leapfrog += 1
            H = new.energy()
            if H - H0 > self.max_energy_error:
                self.divergent = True
                return _Subtree(False)
            dH = H0 - H
            self.sum_metro += 1.0 if dH > 0 else math.exp(dH)
            return _Subtree(True, new, new, p, p, p.copy(), dH)

        init = self.build(depth - 1, z, direction, H0)
        if not init.valid:
            return init
        final = self.build(depth - 1, init.end, direction, H0)
        if not final.valid:
            return final
        log_weight = np.logaddexp(init.log_weight, final.log_weight)
        if final.log_weight > log_weight or (
            math.log(self.rng.uniform()) < final.log_weight - log_weight
        ):
            propose = final.propose
        else:
            propose = init.propose
        rho = init.rho + final.rho
        persist = _no_u_turn(init.p_beg, final.p_end, rho)
        persist &= _no_u_turn(init.p_beg, final.p_beg, init.rho + final.p_beg)
        persist &= _no_u_turn(init.p_end, final.p_end, final.rho + init.p_end)
        return _Subtree(persist, final.end, propose, init.p_beg, final.p_end, rho, log_weight)


def _transition(target, z, rng, step_size, max_depth, max_energy_error):
    p0 = rng.standard_normal(z.q.size)
    z = _State(z.q, p0, z.lp, z.grad)
    H0 = z.energy()
    integ = _Integrator(target, rng, step_size, max_energy_error)

    z_fwd = z_bck = z
    p_fwd_bck = p_fwd_fwd = p_bck_fwd = p_bck_bck = p0
    rho = p0.copy()
    log_weight = 0.0
    sample = z
    depth = 0
    while depth < max_depth:
        if rng.uniform() > 0.5:
            rho_bck = rho
            p_bck_fwd = p_fwd_fwd
            sub = integ.build(depth, z_fwd, 1.0, H0)
            if not sub.valid:
                break
            z_fwd = sub.end
            p_fwd_bck, p_fwd_fwd, rho_fwd = sub.p_beg, sub.p_end, sub.rho
        else:
            rho_fwd = rho
            p_fwd_bck = p_bck_bck
            sub = integ.build(depth, z_bck, -1.0, H0)
            if not sub.valid:
                break
            z_bck = sub.end
            p_bck_fwd, p_bck_bck, rho_bck = sub.p_beg, sub.p_end, sub.rho
        depth += 1
        # biased progressive sampling favours the new subtree
        if sub.log_weight > log_weight or (
            math.log(rng.uniform()) < sub.log_weight - log_weight
        ):
            sample = sub.propose
        log_weight = np.logaddexp(log_weight, sub.log_weight)
        rho = rho_bck + rho_fwd
        persist = _no_u_turn(p_bck_bck, p_fwd_fwd, rho)
        persist &= _no_u_turn(p_bck_bck, p_fwd_bck, rho_bck + p_fwd_bck)
        persist &= _no_u_turn(p_bck_fwd, p_fwd_fwd, rho_fwd + p_bck_fwd)
        if not persist:
            break
    accept = integ.sum_metro / integ.n_leapfrog if integ.n_leapfrog else 0.0
    return sample, accept, depth, integ.n_leapfrog, integ.divergent


def find_reasonable_step_size(target, z, rng, initial=1.0, max_iter=100):
    """Doubling/halving search for a step size with acceptance near 1/2."""
    eps = initial
    p = rng.standard_normal(z.q.size)
    H0 = _State(z.q, p, z.lp, z.grad).energy()

    def log_ratio(eps):
        q, p1, lp, g = leapfrog(target, z.q, p, eps, z.grad)
        H = _State(q, p1, lp, g).energy()
        return H0 - H if np.isfinite(H) else -np.inf

    lr = log_ratio(eps)
    direction = 1.0 if lr > math.log(0.5) else -1.0
    for _ in range(max_iter):
        if not direction * lr > -direction * math.log(2.0):
            break
        eps = eps * 2.0**direction
        lr = log_ratio(eps)
    return eps


class _DualAveraging:
    def __init__(self, step_size, target_accept, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step_size)
        self.target = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept):
        self.counter += 1
        accept = min(1.0, accept)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final(self):
        return math.exp(self.x_bar)


def _initial_state(target, rng, init, radius, dim, tries=100):
    if init is not None:
        q = np.array(init, dtype=float)
        lp, g = target.value_and_grad(q)
        if not np.isfinite(lp):
            raise ValueError("log density is not finite at the supplied init")
        return _State(q, np.zeros(dim), lp, g)
    for _ in range(tries):
        q = rng.uniform(-radius, radius, dim)
        lp, g = target.value_and_grad(q)
        if np.isfinite(lp):
            return _State(q, np.zeros(dim), lp, g)
    raise RuntimeError(f"no finite starting point found in {tries} attempts")


def _run_chain(target, config, chain, init=None):
    rng = np.random.default_rng([config.seed, chain])
    dim = target.dim
    z = _initial_state(target, rng, init, config.init_radius, dim)
    step = find_reasonable_step_size(target, z, rng)
    adapter = _DualAveraging(step, config.target_accept)

    S = config.samples
    draws = np.empty((S, dim))
    lp = np.empty(S)
    divergent = np.zeros(S, dtype=bool)
    depth = np.zeros(S, dtype=int)
    accept = np.empty(S)
    n_leap = np.zeros(S, dtype=int)
    warm_div = 0
    for it in range(config.warmup + S):
        warm = it < config.warmup
        z, a, d, n, div = _transition(
            target, z, rng, step, config.max_tree_depth, config.max_energy_error
        )
        if warm:
            warm_div += div
            step = adapter.update(a)
            if it == config.warmup - 1:
                step = adapter.final()
            continue
        i = it - config.warmup
        draws[i] = z.q
        lp[i] = z.lp
        divergent[i] = div
        depth[i] = d
        accept[i] = a
        n_leap[i] = n
    logger.debug(
        "chain %d: step %.3g, mean accept %.3f, divergent %d",
        chain, step, accept.mean(), divergent.sum(),
    )
    return dict(
        draws=draws, lp=lp, divergent=divergent, depth=depth, accept=accept,
        n_leapfrog=n_leap, step=step, warmup_divergent=warm_div,
    )


def sample_nuts(target, config: NutsConfig | None = None, init=None, n_jobs: int = 1) -> Trace:
    """Draw posterior samples with NUTS.

    Parameters
    ----------
    target
        Object exposing ``dim`` and ``value_and_grad(eta)``.
    config : NutsConfig
    init : array-like, optional
        Starting point, shape ``(J,)`` for all chains or ``(chains, J)``.
        Defaults to uniform draws on ``[-init_radius, init_radius]``.
    n_jobs : int
        Worker processes for running chains. Results do not depend on it.

    Returns
    -------
    Trace
    """
    config = config or NutsConfig()
    inits = [None] * config.chains
    if init is not None:
        init = np.asarray(init, dtype=float)
        inits = [init] * config.chains if init.ndim == 1 else list(init)
    if n_jobs > 1 and config.chains > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [
                pool.submit(_run_chain, target, config, c, inits[c])
                for c in range(config.chains)
            ]
            results = [f.result() for f in futures]
    else:
        results = [_run_chain(target, config, c, inits[c]) for c in range(config.chains)]

    names = tuple(getattr(target, "names", None) or (f"x_{j + 1}" for j in range(target.dim)))
    trace = Trace(
        names=names,
        draws=np.stack([r["draws"] for r in results]),
        lp=np.stack([r["lp"] for r in results]),
        divergent=np.stack([r["divergent"] for r in results]),
        tree_depth=np.stack([r["depth"] for r in results]),
        step_size=np.array([r["step"] for r in results]),
        accept_stat=np.stack([r["accept"] for r in results]),
        n_leapfrog=np.stack([r["n_leapfrog"] for r in results]),
    )
    frac = trace.divergence_fraction()
    unhealthy = [int(c) for c in np.flatnonzero(frac > config.unhealthy_divergence_fraction)]
    for c in unhealthy:
        logger.warning("chain %d: %.0f%% divergent draws", c, 100 * frac[c])
    trace.metadata.update(
        config=asdict(config),
        unhealthy_chains=unhealthy,
        warmup_divergent=[int(r["warmup_divergent"]) for r in results],
    )
    return trace


def select_prediction_chain(trace: Trace, max_divergence_fraction: float | None = None) -> int:
    """Pick the healthy chain with the highest mean log density.

    A chain is unhealthy when more than ``max_divergence_fraction`` of its
    draws diverged (default taken from the trace's config, else 0.25).
    Ties go to the lowest index. The reasoning is stored in
    ``trace.metadata["selection"]``.
    """
    if max_divergence_fraction is None:
        cfg = trace.metadata.get("config", {})
        max_divergence_fraction = cfg.get("unhealthy_divergence_fraction", 0.25)
    healthy = trace.healthy(max_divergence_fraction)
    if not np.any(healthy):
        raise RuntimeError("every chain is unhealthy; no chain to predict from")
    means = trace.lp.mean(axis=1)
    best = None
    for c in range(trace.n_chains):
        if healthy[c] and (best is None or means[c] > means[best]):
            best = c
    trace.metadata["selection"] = dict(
        chain=int(best),
        mean_lp=[float(m) for m in means],
        healthy=[bool(h) for h in healthy],
        rule="highest mean log density among healthy chains, ties to lowest index",
    )
    return int(best)
