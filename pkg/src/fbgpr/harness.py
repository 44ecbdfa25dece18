"""End-to-end experiments: load, split, infer, predict, score, persist.

An experiment is described by an INI-style file::

    [data]
    path = data/airline.csv
    target = passengers

    [kernel]
    expr = SE*Per + SE + Noise

    [split]
    kind = first          # or: fraction
    train = 100           # rows for kind=first
    fraction = 0.5        # training share for kind=fraction

    [prior]
    default = normal_log(0, 3)
    center_on_ml2 = false
    center_std = 0.5
    n_6 = gamma(2, 0.1)   # per-slot override, by slot name

    [scheme]
    name = nuts           # ml2 | nuts | vi-meanfield | vi-fullrank
    seed = 0
    standardize = auto    # auto | true | false
    ml2_restarts = 5

    [nuts]                # chains, warmup, samples, target_accept, max_tree_depth
    [vi]                  # mc_samples, max_iterations, threshold, learning_rate
    [predict]             # M, T

    [output]
    dir = results/airline

Each run writes a bundle to ``<output.dir>/<scheme>/``.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics
from .gp import ml2_optimize
from .kernels import parse_kernel_expr
from .model import LogJointTarget, NormalInLogSpace, PriorSpec, parse_prior
from .nuts import NutsConfig, Trace, sample_nuts, select_prediction_chain
from .predictive import (
    build_mixture,
    empirical_quantiles,
    mixture_moments,
    nlpd,
    rmse,
    thin_draws,
)
from .vi import ViConfig, draw_vi_samples, fit_vi

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "SCHEMES",
    "compare_schemes",
    "emit_plot_data",
    "find_bundles",
    "load_config",
    "load_csv",
    "run_experiment",
    "split",
]

logger = logging.getLogger(__name__)

SCHEMES = ("ml2", "nuts", "vi-meanfield", "vi-fullrank")
SCHEME_LABELS = {
    "ml2": "ML-II",
    "nuts": "HMC (NUTS)",
    "vi-meanfield": "Mean-field VI",
    "vi-fullrank": "Full Rank VI",
}


# --------------------------------------------------------------------------
# Data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    name: str
    X: np.ndarray
    y: np.ndarray
    columns: tuple
    provenance: str = ""
    rows: np.ndarray | None = None

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y disagree on the number of rows")
        if self.y.shape[0] < 2:
            raise ValueError("dataset needs at least two rows")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite values")
        if self.rows is None:
            object.__setattr__(self, "rows", np.arange(self.y.shape[0]))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.name, self.X[idx], self.y[idx], self.columns,
                       self.provenance, self.rows[idx])


def load_csv(path, target: str, name: str | None = None) -> Dataset:
    """Read a headed CSV; every column except ``target`` becomes an input.

    Rows with an empty or non-numeric cell are skipped and reported.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if target not in header:
            raise ValueError(f"{path}: target column {target!r} not in {header}")
        t = header.index(target)
        X, y, bad = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) != len(header):
                    raise ValueError
                vals = [float(c) for c in row]
                if not all(math.isfinite(v) for v in vals):
                    raise ValueError
            except ValueError:
                bad.append(lineno)
                continue
            y.append(vals[t])
            X.append(vals[:t] + vals[t + 1 :])
    if bad:
        logger.warning("%s: skipped %d malformed row(s) at lines %s", path, len(bad), bad)
    if not y:
        raise ValueError(f"{path}: no usable rows")
    cols = tuple(h for i, h in enumerate(header) if i != t)
    return Dataset(name or path.stem, np.array(X, dtype=float).reshape(len(y), -1),
                   np.array(y, dtype=float), cols, provenance=str(path))


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "fraction"
    train: int | None = None
    fraction: float | None = 0.5
    seed: int | None = None

    def __post_init__(self):
        if self.kind == "first":
            if self.train is None or self.train < 1:
                raise ValueError("split kind 'first' needs train >= 1")
        elif self.kind == "fraction":
            if self.fraction is None or not 0 < self.fraction < 1:
                raise ValueError("split kind 'fraction' needs 0 < fraction < 1")
        else:
            raise ValueError(f"unknown split kind {self.kind!r}")


def split(dataset: Dataset, spec: SplitSpec, seed=None):
    """Partition into (train, test). ``first`` keeps row order."""
    n = dataset.n
    if spec.kind == "first":
        if spec.train >= n:
            raise ValueError(f"train size {spec.train} leaves no test rows (N={n})")
        idx_train = np.arange(spec.train)
        idx_test = np.arange(spec.train, n)
    else:
        s = spec.seed if spec.seed is not None else seed
        perm = np.random.default_rng(s).permutation(n)
        n_train = int(round(spec.fraction * n))
        n_train = min(max(n_train, 1), n - 1)
        idx_train = np.sort(perm[:n_train])
        idx_test = np.sort(perm[n_train:])
    return dataset.subset(idx_train), dataset.subset(idx_test)


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    data_path: str
    target: str
    kernel: str
    split: SplitSpec
    scheme: str = "nuts"
    dataset_name: str | None = None
    prior_default: str = "normal_log(0, 3)"
    prior_overrides: dict = field(default_factory=dict)
    center_on_ml2: bool = False
    center_std: float = 0.5
    nuts: NutsConfig = field(default_factory=NutsConfig)
    vi: ViConfig = field(default_factory=ViConfig)
    ml2_restarts: int = 5
    M: int = 200
    T: int = 10_000
    standardize: str = "auto"
    output_dir: str = "results"
    seed: int = 0
    nuts_init: str = "uniform"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.standardize not in ("auto", "true", "false"):
            raise ValueError("standardize must be auto, true or false")
        if self.nuts_init not in ("uniform", "ml2"):
            raise ValueError("nuts init must be 'uniform' or 'ml2'")
        if self.M < 1 or self.T < 100:
            raise ValueError("need M >= 1 and T >= 100")


_INT = int
_FLOAT = float


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# section -> key -> converter
CONFIG_KEYS = {
    "data": {"path": str, "target": str, "name": str},
    "kernel": {"expr": str},
    "split": {"kind": str, "train": _INT, "fraction": _FLOAT, "seed": _INT},
    "prior": {"default": str, "center_on_ml2": _bool, "center_std": _FLOAT},
    "scheme": {"name": str, "seed": _INT, "standardize": str, "ml2_restarts": _INT},
    "nuts": {"chains": _INT, "warmup": _INT, "samples": _INT, "target_accept": _FLOAT,
             "max_tree_depth": _INT, "init": str},
    "vi": {"mc_samples": _INT, "max_iterations": _INT, "threshold": _FLOAT,
           "learning_rate": _FLOAT, "monitor_samples": _INT},
    "predict": {"m": _INT, "t": _INT},
    "output": {"dir": str},
}


def _read_parser(source):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    if isinstance(source, configparser.ConfigParser):
        return source
    text = str(source)
    if isinstance(source, os.PathLike) or ("\n" not in text and "[" not in text):
        if not Path(source).exists():
            raise FileNotFoundError(f"config file not found: {source}")
        with open(source, encoding="utf-8") as fh:
            cp.read_file(fh)
    else:
        cp.read_string(text)
    return cp


def apply_overrides(cp: configparser.ConfigParser, overrides: dict):
    """Set ``{"section.key": value}`` or ``{"key": value}`` entries."""
    for name, value in overrides.items():
        if "." in name:
            section, key = name.split(".", 1)
        else:
            owners = [s for s, keys in CONFIG_KEYS.items() if name.lower() in keys]
            if len(owners) != 1:
                raise ValueError(
                    f"option {name!r} is ambiguous or unknown; use section.key"
                )
            section, key = owners[0], name
        if section not in CONFIG_KEYS:
            raise ValueError(f"unknown config section {section!r}")
        if section != "prior" and key.lower() not in CONFIG_KEYS[section]:
            raise ValueError(f"unknown key {key!r} in section [{section}]")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, str(value))
    return cp


def load_config(source, overrides: dict | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a file path or INI text."""
    cp = _read_parser(source)
    if overrides:
        apply_overrides(cp, overrides)
    raw = {}
    for section in cp.sections():
        if section not in CONFIG_KEYS:
            raise ValueError(f"unknown config section [{section}]")
        for key, value in cp.items(section):
            conv = CONFIG_KEYS[section].get(key.lower())
            if conv is None:
                if section == "prior":
                    continue
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            raw[(section, key.lower())] = conv(value)

    def get(section, key, default=None):
        return raw.get((section, key), default)

    for req in (("data", "path"), ("data", "target"), ("kernel", "expr")):
        if req not in raw:
            raise ValueError(f"missing required key {req[1]!r} in [{req[0]}]")

    seed = get("scheme", "seed", 0)
    kind = get("split", "kind", "fraction")
    spec = SplitSpec(
        kind=kind,
        train=get("split", "train"),
        fraction=get("split", "fraction", 0.5 if kind == "fraction" else None),
        seed=get("split", "seed"),
    )
    if kind == "first" and ("split", "fraction") in raw:
        raise ValueError("give either split.train (kind=first) or split.fraction, not both")
    overrides_prior = {}
    if cp.has_section("prior"):
        for key, value in cp.items("prior"):
            if key.lower() not in CONFIG_KEYS["prior"]:
                overrides_prior[key] = value
    nuts_cfg = NutsConfig(
        chains=get("nuts", "chains", 4),
        warmup=get("nuts", "warmup", 500),
        samples=get("nuts", "samples", 1000),
        target_accept=get("nuts", "target_accept", 0.8),
        max_tree_depth=get("nuts", "max_tree_depth", 10),
        seed=seed,
    )
    scheme = get("scheme", "name", "nuts")
    vi_cfg = ViConfig(
        family="mean-field" if scheme == "vi-meanfield" else "full-rank",
        mc_samples=get("vi", "mc_samples", 8),
        max_iterations=get("vi", "max_iterations", 10000),
        threshold=get("vi", "threshold", 1e-4),
        learning_rate=get("vi", "learning_rate"),
        monitor_samples=get("vi", "monitor_samples", 200),
        seed=seed,
    )
    cfg = ExperimentConfig(
        data_path=get("data", "path"),
        target=get("data", "target"),
        dataset_name=get("data", "name"),
        kernel=get("kernel", "expr"),
        split=spec,
        scheme=scheme,
        prior_default=get("prior", "default", "normal_log(0, 3)"),
        prior_overrides=overrides_prior,
        center_on_ml2=get("prior", "center_on_ml2", False),
        center_std=get("prior", "center_std", 0.5),
        nuts=nuts_cfg,
        vi=vi_cfg,
        ml2_restarts=get("scheme", "ml2_restarts", 5),
        M=get("predict", "m", 200),
        T=get("predict", "t", 10_000),
        standardize=get("scheme", "standardize", "auto"),
        output_dir=get("output", "dir", "results"),
        seed=seed,
        nuts_init=get("nuts", "init", "uniform"),
    )
    # fail early on unknown slot names
    k = parse_kernel_expr(cfg.kernel, _peek_input_dim(cfg))
    for name in cfg.prior_overrides:
        try:
            k.slot_index(name)
        except KeyError as exc:
            raise ValueError(
                f"prior override {name!r}: no such slot (have {list(k.names)})"
            ) from exc
        parse_prior(cfg.prior_overrides[name])
    parse_prior(cfg.prior_default)
    return cfg


def _peek_input_dim(cfg):
    path = Path(cfg.data_path)
    if not path.exists():
        return None
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    return max(len(header) - 1, 1)


def config_to_ini(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["data"] = {"path": cfg.data_path, "target": cfg.target}
    if cfg.dataset_name:
        cp["data"]["name"] = cfg.dataset_name
    cp["kernel"] = {"expr": cfg.kernel}
    sp = {"kind": cfg.split.kind}
    if cfg.split.kind == "first":
        sp["train"] = str(cfg.split.train)
    else:
        sp["fraction"] = repr(cfg.split.fraction)
    if cfg.split.seed is not None:
        sp["seed"] = str(cfg.split.seed)
    cp["split"] = sp
    pr = {
        "default": cfg.prior_default,
        "center_on_ml2": str(cfg.center_on_ml2).lower(),
        "center_std": repr(cfg.center_std),
    }
    pr.update({k: str(v) for k, v in sorted(cfg.prior_overrides.items())})
    cp["prior"] = pr
    cp["scheme"] = {
        "name": cfg.scheme,
        "seed": str(cfg.seed),
        "standardize": cfg.standardize,
        "ml2_restarts": str(cfg.ml2_restarts),
    }
    cp["nuts"] = {
        "chains": str(cfg.nuts.chains),
        "warmup": str(cfg.nuts.warmup),
        "samples": str(cfg.nuts.samples),
        "target_accept": repr(cfg.nuts.target_accept),
        "max_tree_depth": str(cfg.nuts.max_tree_depth),
        "init": cfg.nuts_init,
    }
    vi = {
        "mc_samples": str(cfg.vi.mc_samples),
        "max_iterations": str(cfg.vi.max_iterations),
        "threshold": repr(cfg.vi.threshold),
        "monitor_samples": str(cfg.vi.monitor_samples),
    }
    if cfg.vi.learning_rate is not None:
        vi["learning_rate"] = repr(cfg.vi.learning_rate)
    cp["vi"] = vi
    cp["predict"] = {"M": str(cfg.M), "T": str(cfg.T)}
    cp["output"] = {"dir": cfg.output_dir}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


class _Lock:
    def __init__(self, directory):
        self.path = Path(directory) / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"{self.path.parent} is locked by another run (remove {self.path} "
                "if stale)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _scaler(values, enabled):
    if not enabled:
        return 0.0, 1.0
    mu = float(np.mean(values))
    sd = float(np.std(values))
    return mu, sd if sd > 0 else 1.0


def _build_prior(cfg, kernel, ml2_eta=None):
    default = parse_prior(cfg.prior_default)
    priors = [default] * kernel.n_params
    if cfg.center_on_ml2:
        priors = [NormalInLogSpace(float(e), cfg.center_std) for e in ml2_eta]
    spec = PriorSpec(tuple(priors))
    return spec.with_overrides(kernel, cfg.prior_overrides)


def _trace_from_vi(names, draws, lps):
    S = draws.shape[0]
    return Trace(
        names=tuple(names),
        draws=draws[None],
        lp=lps[None],
        divergent=np.zeros((1, S), dtype=bool),
        tree_depth=np.zeros((1, S), dtype=int),
        step_size=np.array([np.nan]),
    )


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Run one scheme end to end and write its bundle.

    Returns the bundle directory. On failure a ``FAILURE`` file with the
    traceback is left next to whatever was already written, and the error
    is re-raised.
    """
    bundle = Path(out_dir) if out_dir is not None else Path(cfg.output_dir) / cfg.scheme
    bundle.mkdir(parents=True, exist_ok=True)
    with _Lock(bundle):
        failure = bundle / "FAILURE"
        failure.unlink(missing_ok=True)
        try:
            _run(cfg, bundle)
        except BaseException:
            failure.write_text(traceback.format_exc(), encoding="utf-8")
            raise
    return bundle


def _run(cfg, bundle):
    t_start = time.perf_counter()
    (bundle / "config.ini").write_text(config_to_ini(cfg), encoding="utf-8")
    ss = np.random.SeedSequence(cfg.seed)
    seed_ml2, seed_draws, seed_quant = (int(s.generate_state(1)[0]) for s in ss.spawn(3))

    data = load_csv(cfg.data_path, cfg.target, cfg.dataset_name)
    train, test = split(data, cfg.split, cfg.seed)
    kernel = parse_kernel_expr(cfg.kernel, data.d)
    standardize = cfg.standardize == "true" or (cfg.standardize == "auto" and data.d > 1)
    x_mu = np.zeros(data.d)
    x_sd = np.ones(data.d)
    # a periodic leaf with a fixed period is tied to the raw input units
    scale_inputs = standardize and not any(leaf.kind == "Per" for leaf in kernel.leaves)
    if scale_inputs:
        x_mu = train.X.mean(axis=0)
        x_sd = train.X.std(axis=0)
        x_sd[x_sd == 0] = 1.0
    y_mu, y_sd = _scaler(train.y, standardize)
    Xtr = (train.X - x_mu) / x_sd
    Xte = (test.X - x_mu) / x_sd
    ytr = (train.y - y_mu) / y_sd

    info = dict(
        scheme=cfg.scheme,
        dataset=data.name,
        dataset_path=str(cfg.data_path),
        n_total=data.n,
        d=data.d,
        n_train=train.n,
        n_test=test.n,
        split=dataclasses.asdict(cfg.split),
        split_hash=hashlib.sha256(test.rows.tobytes()).hexdigest()[:16],
        seed=cfg.seed,
        kernel=str(kernel),
        slot_names=list(kernel.names),
        standardized=standardize,
        inputs_scaled=scale_inputs,
    )

    ml2 = None
    if cfg.scheme == "ml2" or cfg.center_on_ml2 or cfg.nuts_init == "ml2":
        ml2 = ml2_optimize(kernel, Xtr, ytr, restarts=cfg.ml2_restarts, seed=seed_ml2)
        info["ml2"] = dict(
            eta=ml2.theta.eta.tolist(),
            log_marginal=ml2.log_marginal,
            best_restart=ml2.best_restart,
        )

    if cfg.scheme == "ml2":
        draws = ml2.theta.eta[None, :]
        trace = _trace_from_vi(kernel.names, draws, np.array([ml2.log_marginal]))
        trace.to_csv(bundle / "trace.csv")
        trace.metadata["ml2_restarts"] = ml2.restarts
        trace.write_metadata(bundle / "trace.json")
    else:
        prior = _build_prior(cfg, kernel, None if ml2 is None else ml2.theta.eta)
        info["priors"] = {n: str(p) for n, p in zip(kernel.names, prior.priors)}
        target = LogJointTarget(kernel, prior, Xtr, ytr)
        if cfg.scheme == "nuts":
            init = ml2.theta.eta if cfg.nuts_init == "ml2" else None
            trace = sample_nuts(target, dataclasses.replace(cfg.nuts, seed=cfg.seed), init=init)
            chain = select_prediction_chain(trace)
            trace.to_csv(bundle / "trace.csv")
            trace.write_metadata(bundle / "trace.json")
            summary = diagnostics.summarize_trace(trace)
            summary.to_csv(bundle / "diagnostics.csv")
            (bundle / "diagnostics.txt").write_text(summary.to_text() + "\n", encoding="utf-8")
            draws = thin_draws(trace.draws[chain], cfg.M)
            info["prediction_chain"] = chain
            info["step_size"] = trace.step_size.tolist()
            info["divergence_fraction"] = trace.divergence_fraction().tolist()
        else:
            vi_cfg = dataclasses.replace(
                cfg.vi,
                family="mean-field" if cfg.scheme == "vi-meanfield" else "full-rank",
                seed=cfg.seed,
            )
            res = fit_vi(target, vi_cfg)
            _dump_json(res.to_dict(), bundle / "vi.json")
            draws = draw_vi_samples(res.params, cfg.M, seed_draws)
            lps = np.array([target.value_and_grad(e)[0] for e in draws])
            trace = _trace_from_vi(kernel.names, draws, lps)
            trace.to_csv(bundle / "trace.csv")
            trace.write_metadata(bundle / "trace.json")
            info["vi"] = dict(iterations=res.iterations, converged=res.converged,
                              learning_rate=res.learning_rate)

    mix = build_mixture(kernel, Xtr, ytr, Xte, draws).rescale(y_sd, y_mu)
    mean, var = mixture_moments(mix)
    lo, hi = empirical_quantiles(mix, cfg.T, seed=seed_quant)
    r, r_se = rmse(mean, test.y)
    metrics = dict(rmse=r, rmse_se=r_se, nlpd=nlpd(mix, test.y), M=mix.n_components, T=cfg.T)

    _write_rows(
        bundle / "predictions.csv",
        ["x_index", "mean", "var", "lower95", "upper95"],
        [[int(i), repr(float(m)), repr(float(v)), repr(float(a)), repr(float(b))]
         for i, m, v, a, b in zip(test.rows, mean, var, lo, hi)],
    )
    _write_rows(
        bundle / "test_points.csv",
        ["x_index", *data.columns, "observed"],
        [[int(i), *(repr(float(v)) for v in x), repr(float(t))]
         for i, x, t in zip(test.rows, test.X, test.y)],
    )
    _dump_json(metrics, bundle / "metrics.json")
    info["runtime_seconds"] = time.perf_counter() - t_start
    _dump_json(info, bundle / "run.json")
    logger.info("%s: rmse %.4g (%.3g), nlpd %.4g", cfg.scheme, r, r_se, metrics["nlpd"])
    return metrics


# --------------------------------------------------------------------------
# Reporting
# --------------------------------------------------------------------------


def find_bundles(path) -> list:
    """Run bundles at ``path``: the directory itself or its children."""
    path = Path(path)
    if (path / "metrics.json").exists():
        return [path]
    if not path.is_dir():
        raise FileNotFoundError(f"no such bundle directory: {path}")
    found = sorted(p for p in path.iterdir() if (p / "metrics.json").exists())
    order = {s: i for i, s in enumerate(SCHEMES)}
    found.sort(key=lambda p: (order.get(_read_json(p / "run.json").get("scheme"), 99), p.name))
    return found


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def emit_plot_data(bundle, out=None) -> list:
    """Long-format rows ``(x, observed, mean, lower95, upper95, scheme)``.

    Covers every run bundle under ``bundle``. Only 1-d inputs are
    supported. Writes CSV to ``out`` (path or file object) when given.
    """
    bundles = find_bundles(bundle)
    if not bundles:
        raise ValueError(f"no run bundles found in {bundle}")
    rows = []
    for b in bundles:
        run = _read_json(b / "run.json")
        if run["d"] != 1:
            raise ValueError(
                f"{b}: plot data needs 1-d inputs, dataset has d={run['d']}"
            )
        _, pred = _read_csv(b / "predictions.csv")
        _, pts = _read_csv(b / "test_points.csv")
        for p, t in zip(pred, pts):
            if p[0] != t[0]:
                raise ValueError(f"{b}: predictions and test points are misaligned")
            rows.append(dict(x=float(t[1]), observed=float(t[-1]), mean=float(p[1]),
                             lower95=float(p[3]), upper95=float(p[4]),
                             scheme=run["scheme"]))
    if out is not None:
        header = ["x", "observed", "mean", "lower95", "upper95", "scheme"]
        body = [[repr(r["x"]), repr(r["observed"]), repr(r["mean"]), repr(r["lower95"]),
                 repr(r["upper95"]), r["scheme"]] for r in rows]
        if hasattr(out, "write"):
            w = csv.writer(out)
            w.writerow(header)
            w.writerows(body)
        else:
            _write_rows(out, header, body)
    return rows


def compare_schemes(bundles, csv_out=None) -> tuple:
    """RMSE and NLPD table across run bundles.

    Returns
    -------
    rows : list of dict
        One per bundle with scheme, rmse, rmse_se, nlpd and seed.
    text : str
        Aligned plain-text rendering.
    """
    paths = []
    for b in bundles:
        paths.extend(find_bundles(b))
    if not paths:
        raise ValueError("no run bundles given")
    ref = None
    rows = []
    for p in paths:
        run = _read_json(p / "run.json")
        met = _read_json(p / "metrics.json")
        key = (run["dataset"], run["n_total"], run["split_hash"])
        if ref is None:
            ref = (key, p)
        elif key != ref[0]:
            raise ValueError(
                f"bundle {p} uses a different dataset or split than {ref[1]}"
            )
        rows.append(dict(scheme=run["scheme"], rmse=met["rmse"], rmse_se=met["rmse_se"],
                         nlpd=met["nlpd"], seed=run["seed"], bundle=str(p)))
    if csv_out is not None:
        _write_rows(csv_out, ["scheme", "rmse", "rmse_se", "nlpd", "seed", "bundle"],
                    [[r["scheme"], repr(r["rmse"]), repr(r["rmse_se"]), repr(r["nlpd"]),
                      r["seed"], r["bundle"]] for r in rows])
    label_w = max(len("Inference scheme"), *(len(SCHEME_LABELS.get(r["scheme"], r["scheme"])) for r in rows))
    lines = [f"{ref[0][0]} (N={ref[0][1]})",
             "Inference scheme".ljust(label_w) + "  " + "RMSE".rjust(16) + "  " + "NLPD".rjust(8)]
    for r in rows:
        cell = f"{r['rmse']:.3f} ({r['rmse_se']:.2f})"
        lines.append(SCHEME_LABELS.get(r["scheme"], r["scheme"]).ljust(label_w)
                     + "  " + cell.rjust(16) + "  " + f"{r['nlpd']:.2f}".rjust(8))
    return rows, "\n".join(lines)
