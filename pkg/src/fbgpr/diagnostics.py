"""Convergence statistics for multi-chain traces."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TraceSummary",
    "autocorrelation",
    "effective_sample_size",
    "hpd_interval",
    "rhat",
    "summarize_trace",
]

COLUMNS = ("mean", "sd", "mc_error", "hpd_2.5", "hpd_97.5", "n_eff", "Rhat")


def _autocov(x, max_lag):
    # biased estimator: divide by N at every lag
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[: max_lag + 1] / n
    return acov


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Autocorrelations at lags ``1..max_lag``.

    Raises
    ------
    ValueError
        If the series is constant or not longer than ``max_lag``.
    """
    series = np.asarray(series, dtype=float)
    if series.size <= max_lag:
        raise ValueError("series must be longer than max_lag")
    acov = _autocov(series, max_lag)
    if not acov[0] > 0:
        raise ValueError("series has zero variance")
    return acov[1:] / acov[0]


def _as_chains(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected shape (chains, draws)")
    return x


def effective_sample_size(chains) -> float:
    """Effective sample size of one scalar across chains.

    ``n_eff = M N / (1 + 2 sum_t rho_t)`` with the combined-chain
    autocorrelation estimate, truncated by Geyer's initial positive
    sequence and capped at ``M N``.
    """
    x = _as_chains(chains)
    m, n = x.shape
    if n < 10:
        raise ValueError("need at least 10 draws per chain")
    acov = np.array([_autocov(c, n - 1) for c in x])
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    var_plus = W * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if not var_plus > 0:
        raise ValueError("zero variance across draws")
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum pairs (rho_{2k} + rho_{2k+1}) while positive
    total = 0.0
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        total += pair
        t += 2
    tau = -1.0 + 2.0 * total
    n_eff = m * n / tau if tau > 0 else m * n
    return float(min(n_eff, m * n))


def rhat(chains) -> float:
    """Split-chain potential scale reduction factor.

    Each chain is halved; with half-chain length ``n``
    ``Rhat = sqrt((W (n - 1)/n + B/n) / W)``.
    """
    x = _as_chains(chains)
    m, n = x.shape
    if m < 2:
        raise ValueError("Rhat needs at least two chains")
    half = n // 2
    if half < 2:
        raise ValueError("chains too short to split")
    split = np.concatenate([x[:, :half], x[:, n - half :]], axis=0)
    W = split.var(axis=1, ddof=1).mean()
    if not W > 0:
        raise ValueError("zero within-chain variance")
    B = half * split.mean(axis=1).var(ddof=1)
    var_plus = W * (half - 1.0) / half + B / half
    return float(math.sqrt(var_plus / W))


def hpd_interval(samples, mass: float = 0.95):
    """Shortest interval holding ``ceil(mass * n)`` of the sorted samples."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    if not 0 < mass < 1:
        raise ValueError("mass must lie in (0, 1)")
    n = x.size
    if n < 50:
        raise ValueError("need at least 50 samples")
    k = math.ceil(mass * n)
    widths = x[k - 1 :] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


@dataclass
class TraceSummary:
    """Per-slot summary table; failed cells hold NaN and an entry in ``flags``."""

    names: tuple
    table: np.ndarray
    flags: dict

    def row(self, name) -> dict:
        i = self.names.index(name)
        return dict(zip(COLUMNS, self.table[i]))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["hyperparameter", *COLUMNS])
            for name, row in zip(self.names, self.table):
                w.writerow([name] + [repr(float(v)) for v in row])

    def to_text(self) -> str:
        width = max(len("hyperparameter"), *(len(n) for n in self.names))
        head = "hyperparameter".ljust(width) + "".join(c.rjust(11) for c in COLUMNS)
        lines = [head]
        for name, row in zip(self.names, self.table):
            cells = "".join(
                ("nan" if not np.isfinite(v) else f"{v:.3f}").rjust(11) for v in row
            )
            lines.append(name.ljust(width) + cells)
        for (name, col), msg in sorted(self.flags.items()):
            lines.append(f"! {name}.{col}: {msg}")
        return "\n".join(lines)

    def __str__(self):
        return self.to_text()


def summarize_trace(trace, space: str = "theta", chains=None) -> TraceSummary:
    """Table of mean, sd, mc_error, HPD bounds, n_eff and Rhat per slot.

    ``space="theta"`` summarises ``exp(eta)``; ``space="eta"`` the raw
    draws. ``mc_error`` is ``sd / sqrt(n_eff)``.
    """
    draws = trace.draws if chains is None else trace.draws[list(chains)]
    if space == "theta":
        draws = np.exp(draws)
    elif space != "eta":
        raise ValueError("space must be 'theta' or 'eta'")
    C, S, J = draws.shape
    table = np.full((J, len(COLUMNS)), np.nan)
    flags = {}
    for j, name in enumerate(trace.names):
        x = draws[:, :, j]
        flat = x.reshape(-1)
        table[j, 0] = flat.mean()
        table[j, 1] = flat.std(ddof=1) if flat.size > 1 else np.nan
        for col, fn in (("hpd", hpd_interval), ("n_eff", effective_sample_size), ("Rhat", rhat)):
            try:
                value = fn(flat) if col == "hpd" else fn(x)
            except ValueError as exc:
                flags[(name, col)] = str(exc)
                continue
            if col == "hpd":
                table[j, 3], table[j, 4] = value
            elif col == "n_eff":
                table[j, 5] = value
            else:
                table[j, 6] = value
        if np.isfinite(table[j, 5]) and np.isfinite(table[j, 1]):
            table[j, 2] = table[j, 1] / math.sqrt(table[j, 5])
    return TraceSummary(tuple(trace.names), table, flags)
