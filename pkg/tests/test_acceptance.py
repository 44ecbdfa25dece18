"""Acceptance criteria, one PASS/FAIL line per criterion.

The dataset criteria run full experiments through the harness. Bundles are
cached under ``results/acceptance/`` and reused while their echoed
configuration is unchanged, so only the first run is slow. Delete that
directory to force a fresh run.

Profiles used here:

* airline: the shipped config (4 chains x 1000 draws, centred prior).
* CO2: the reduced profile, 4 chains x 250 warmup + 250 draws for HMC and
  at most 3000 VI iterations, seeds 0, 1, 2 for the VI ordering check.
* wine: the shipped config; requires ``data/winequality-red.csv``.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from fbgpr.diagnostics import effective_sample_size, hpd_interval, rhat
from fbgpr.gp import grad_log_marginal, log_marginal_likelihood, predictive_posterior
from fbgpr.harness import config_to_ini, load_config, run_experiment
from fbgpr.kernels import eval_cross_matrix, eval_kernel_matrix, grad_kernel_matrix, parse_kernel_expr
from fbgpr.model import LogJointTarget, PriorSpec, parse_prior
from fbgpr.nuts import NutsConfig, sample_nuts
from fbgpr.predictive import PredictiveMixture, empirical_quantiles, mixture_moments
from fbgpr.vi import (
    FullRankParams,
    MeanFieldParams,
    ViConfig,
    elbo_estimate,
    elbo_grad_estimate,
    fit_vi,
)

from conftest import ACCEPTANCE_LINES, GaussianTarget, central_diff, rel_err

ROOT = Path(__file__).resolve().parents[1]
CACHE = ROOT / "results" / "acceptance"

# published reference numbers the criteria are phrased against
REF_CO2_RMSE = {"nuts": 2.37, "vi-meanfield": 2.74, "vi-fullrank": 2.56}

CO2_REDUCED = {
    "nuts.warmup": "250",
    "nuts.samples": "250",
    "vi.max_iterations": "3000",
}


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def bundle(config, scheme, tag, overrides=None, seed=0):
    """Run (or reuse) one experiment and return its metrics and run info."""
    cfg_file = ROOT / "configs" / config
    over = dict(overrides or {})
    base = load_config(cfg_file)
    over.update({
        "data.path": str(ROOT / base.data_path),
        "scheme.name": scheme,
        "scheme.seed": str(seed),
        "output.dir": str(CACHE / tag),
    })
    cfg = load_config(cfg_file, over)
    out = CACHE / tag / scheme
    ini = out / "config.ini"
    fresh = (
        (out / "metrics.json").exists()
        and not (out / "FAILURE").exists()
        and ini.exists()
        and ini.read_text() == config_to_ini(cfg)
    )
    if not fresh:
        run_experiment(cfg)
    with open(out / "metrics.json") as fh:
        metrics = json.load(fh)
    with open(out / "run.json") as fh:
        run = json.load(fh)
    return metrics, run, out


# --------------------------------------------------------------------------
# 1. airline
# --------------------------------------------------------------------------


def test_criterion_1_airline():
    m_ml2, r_ml2, _ = bundle("airline.ini", "ml2", "airline")
    m_hmc, r_hmc, _ = bundle("airline.ini", "nuts", "airline")
    runtime = r_ml2["runtime_seconds"] + r_hmc["runtime_seconds"]
    in_band = 13.0 <= m_hmc["rmse"] <= 20.0
    ok = in_band and m_hmc["rmse"] < m_ml2["rmse"] and runtime < 600
    assert report(
        1, ok,
        f"airline HMC RMSE {m_hmc['rmse']:.2f} (band [13, 20]), "
        f"ML-II RMSE {m_ml2['rmse']:.2f}, runtime {runtime:.0f}s",
    )


# --------------------------------------------------------------------------
# 2, 4, 6. CO2
# --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def co2_runs():
    runs = {}
    for scheme in ("ml2", "nuts", "vi-meanfield", "vi-fullrank"):
        runs[scheme] = bundle("co2.ini", scheme, "co2_seed0", CO2_REDUCED)
    return runs


def test_criterion_2_co2_direction(co2_runs):
    base = co2_runs["ml2"][0]
    parts, ok = [], True
    runtime = sum(r[1]["runtime_seconds"] for r in co2_runs.values())
    for scheme, ref in REF_CO2_RMSE.items():
        m = co2_runs[scheme][0]
        better = m["rmse"] < base["rmse"] and m["nlpd"] < base["nlpd"]
        close = abs(m["rmse"] - ref) <= 0.4 * ref
        ok &= better and close
        parts.append(f"{scheme} {m['rmse']:.2f}/{m['nlpd']:.2f}")
    ok &= runtime < 1800
    assert report(
        2, ok,
        f"CO2 RMSE/NLPD ML-II {base['rmse']:.2f}/{base['nlpd']:.2f} vs "
        + ", ".join(parts) + f"; runtime {runtime / 60:.1f} min",
    )


def test_criterion_4_meanfield_vs_fullrank(co2_runs):
    votes, parts = 0, []
    for seed in (0, 1, 2):
        if seed == 0:
            mf, fr = co2_runs["vi-meanfield"][0], co2_runs["vi-fullrank"][0]
        else:
            tag = f"co2_seed{seed}"
            mf = bundle("co2.ini", "vi-meanfield", tag, CO2_REDUCED, seed)[0]
            fr = bundle("co2.ini", "vi-fullrank", tag, CO2_REDUCED, seed)[0]
        votes += mf["rmse"] >= fr["rmse"]
        parts.append(f"seed {seed}: MF {mf['rmse']:.3f} FR {fr['rmse']:.3f}")
    assert report(4, votes >= 2, f"{votes}/3 seeds MF >= FR ({'; '.join(parts)})")


def test_criterion_6_co2_noise_posterior(co2_runs):
    out = co2_runs["nuts"][2]
    rows = np.genfromtxt(out / "diagnostics.csv", delimiter=",", names=True, dtype=None,
                         encoding="utf-8")
    row = rows[rows["hyperparameter"] == "n_11"][0]
    ok = 0.15 <= row["mean"] <= 0.25 and 0.98 <= row["Rhat"] <= 1.05
    assert report(6, ok, f"CO2 n_11 posterior mean {row['mean']:.3f} (band [0.15, 0.25]), "
                         f"Rhat {row['Rhat']:.3f}")


# --------------------------------------------------------------------------
# 3. wine
# --------------------------------------------------------------------------


def test_criterion_3_wine():
    path = ROOT / "data" / "winequality-red.csv"
    if not path.exists():
        report(3, False, f"wine data missing ({path.relative_to(ROOT)}); not evaluated")
        pytest.fail("wine dataset not available")
    parts, ok = [], True
    for scheme in ("ml2", "nuts", "vi-meanfield", "vi-fullrank"):
        m = bundle("wine.ini", scheme, "wine")[0]
        ok &= 0.60 <= m["rmse"] <= 0.70 and 0.92 <= m["nlpd"] <= 1.05
        parts.append(f"{scheme} {m['rmse']:.3f}/{m['nlpd']:.3f}")
    assert report(3, ok, "wine RMSE/NLPD " + ", ".join(parts))


# --------------------------------------------------------------------------
# 5. numerical properties
# --------------------------------------------------------------------------


def _gradient_checks(rng):
    errs = {}
    k = parse_kernel_expr("SE*Per + RQ + Noise", 1)
    X = rng.uniform(0, 3, (12, 1))
    y = rng.normal(size=12)
    eta = rng.normal(0, 0.3, k.n_params)
    G = grad_kernel_matrix(k, eta, X)
    e = 0.0
    for j in range(k.n_params):
        fd = central_diff(lambda v: eval_kernel_matrix(k, np.r_[eta[:j], v, eta[j + 1:]], X),
                          np.array([eta[j]]))
        e = max(e, rel_err(G[j], np.asarray(fd).reshape(G[j].shape)))
    errs["kernel"] = e
    errs["evidence"] = rel_err(
        grad_log_marginal(k, eta, X, y),
        np.array(central_diff(lambda v: log_marginal_likelihood(k, v, X, y), eta)),
    )
    prior = PriorSpec((parse_prior("normal_log(0, 3)"), parse_prior("gamma(2, 0.1)"),
                       parse_prior("normal(1, 2)")))
    target = LogJointTarget(parse_kernel_expr("SE + Noise", 1), prior, X, y)
    e3 = np.array([0.2, -0.5, -1.0])
    errs["log joint"] = rel_err(target.value_and_grad(e3)[1],
                                np.array(central_diff(lambda v: target.value_and_grad(v)[0], e3)))
    worst = 0.0
    for params in (MeanFieldParams(np.array([0.1, -0.4, -1.5]), np.array([-1.0, -0.5, -2.0])),
                   FullRankParams(np.array([0.1, -0.4, -1.5]),
                                  np.array([[0.3, 0, 0], [0.05, 0.4, 0], [-0.02, 0.03, 0.2]]))):
        g, _ = elbo_grad_estimate(target, params, M=16, seed=7)
        v = params.pack()
        fd = central_diff(lambda w: elbo_estimate(target, type(params).unpack(w, 3), 16,
                                                  seed=7).value, v, h=1e-4)
        worst = max(worst, rel_err(g, np.array(fd)))
    errs["ELBO (CRN)"] = worst
    return errs


def test_criterion_5_numerical_suite():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    checks = {}

    grads = _gradient_checks(rng)
    checks["gradients"] = max(grads.values()) < 1e-4

    k = parse_kernel_expr("SE + RQ + Noise", 1)
    X = rng.uniform(0, 4, (30, 1))
    Xs = rng.uniform(0, 4, (7, 1))
    y = rng.normal(size=30)
    eta = np.r_[rng.normal(0, 0.3, k.n_params - 1), np.log(0.3)]
    K = eval_kernel_matrix(k, eta, X)
    Ki = np.linalg.inv(K)
    ref_lml = -0.5 * y @ Ki @ y - 0.5 * np.linalg.slogdet(K)[1] - 15 * np.log(2 * np.pi)
    post = predictive_posterior(k, eta, X, y, Xs)
    Ks = eval_cross_matrix(k, eta, X, Xs)
    checks["dense oracles"] = (
        abs(log_marginal_likelihood(k, eta, X, y) - ref_lml) < 1e-10
        and np.max(np.abs(post.mean - Ks @ Ki @ y)) < 1e-10
        and np.max(np.abs(post.cov - (eval_kernel_matrix(k, eta, Xs, include_noise=False)
                                      - Ks @ Ki @ Ks.T))) < 1e-10
    )

    target = GaussianTarget(np.zeros(10), np.eye(10))
    tr = sample_nuts(target, NutsConfig(chains=4, warmup=500, samples=1000, seed=1))
    draws = tr.draws.reshape(-1, 10)
    ok = True
    for j in range(10):
        ch = tr.draws[:, :, j]
        se = draws[:, j].std() / np.sqrt(effective_sample_size(ch))
        ok &= abs(draws[:, j].mean()) < 3 * se and rhat(ch) < 1.01
        ok &= stats.kstest(draws[:, j], "norm").statistic < 0.05
    checks["NUTS 10-d"] = bool(ok)

    corr = np.array([[1.0, 0.9], [0.9, 1.0]])
    g2 = GaussianTarget(np.array([0.5, -1.0]), corr)
    fr = fit_vi(g2, ViConfig(family="full-rank", seed=1)).params
    mf = fit_vi(g2, ViConfig(family="mean-field", seed=1)).params
    checks["VI"] = (
        np.max(np.abs(fr.mu - g2.mean)) < 0.02
        and np.max(np.abs(fr.cov - corr)) < 0.05
        and np.all(np.diag(mf.cov) <= np.diag(corr))
    )

    mix = PredictiveMixture(np.array([[0.0, 1.0], [2.0, 1.0]]),
                            np.array([[1.0, 0.5], [1.0, 1.5]]), np.zeros(2))
    mean, var = mixture_moments(mix)
    single = PredictiveMixture(np.zeros((1, 1)), np.ones((1, 1)), np.zeros(1))
    lo, hi = empirical_quantiles(single, T=100_000, seed=0)
    checks["mixture"] = (
        np.allclose(mean, [1.0, 1.0]) and np.allclose(var, [2.0, 1.0])
        and abs(lo[0] + 1.96) < 0.03 and abs(hi[0] - 1.96) < 0.03
    )

    rho = 0.5
    x = np.empty((4, 5000))
    x[:, 0] = rng.normal(size=4) / np.sqrt(1 - rho**2)
    noise = rng.normal(size=(4, 5000))
    for t in range(1, 5000):
        x[:, t] = rho * x[:, t - 1] + noise[:, t]
    ess_ref = x.size * (1 - rho) / (1 + rho)
    same = rng.normal(size=(4, 1000))
    moved = same.copy()
    moved[0] += 3.0
    h_lo, h_hi = hpd_interval(rng.normal(size=200_000))
    checks["diagnostics"] = (
        abs(effective_sample_size(x) - ess_ref) / ess_ref < 0.15
        and rhat(same) < 1.01 and rhat(moved) > 1.5
        and abs(h_lo + 1.96) < 0.03 and abs(h_hi - 1.96) < 0.03
    )

    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 120
    failed = [name for name, v in checks.items() if not v]
    detail = (f"{len(checks) - len(failed)}/{len(checks)} groups pass in {elapsed:.0f}s"
              + (f"; failing: {', '.join(failed)}" if failed else "")
              + f"; worst gradient rel err {max(grads.values()):.1e}")
    assert report(5, ok, detail)
