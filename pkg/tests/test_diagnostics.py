import numpy as np
import pytest

from fbgpr.diagnostics import (
    autocorrelation,
    effective_sample_size,
    hpd_interval,
    rhat,
    summarize_trace,
)
from fbgpr.nuts import Trace


def ar1(rng, n, rho, chains=4):
    x = np.empty((chains, n))
    x[:, 0] = rng.normal(size=chains) / np.sqrt(1 - rho**2)
    e = rng.normal(size=(chains, n))
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + e[:, t]
    return x


class TestAutocorrelation:
    def test_ar1(self, rng):
        x = ar1(rng, 50_000, 0.5, chains=1)[0]
        r = autocorrelation(x, 3)
        np.testing.assert_allclose(r, [0.5, 0.25, 0.125], atol=0.02)

    def test_matches_direct_sum(self, rng):
        x = rng.normal(size=64)
        xc = x - x.mean()
        direct = [np.sum(xc[:-k] * xc[k:]) / np.sum(xc**2) for k in (1, 2, 5)]
        r = autocorrelation(x, 5)
        np.testing.assert_allclose(r[[0, 1, 4]], direct, atol=1e-12)

    def test_rejects(self):
        with pytest.raises(ValueError):
            autocorrelation(np.ones(10), 2)
        with pytest.raises(ValueError):
            autocorrelation(np.arange(3.0), 3)


class TestEss:
    def test_ar1_analytic(self, rng):
        rho = 0.5
        x = ar1(rng, 5000, rho)
        expected = x.size * (1 - rho) / (1 + rho)
        assert abs(effective_sample_size(x) - expected) / expected < 0.15

    def test_iid_near_n(self, rng):
        x = rng.normal(size=(4, 2000))
        assert effective_sample_size(x) == pytest.approx(8000, rel=0.15)
        assert effective_sample_size(x) <= 8000

    def test_antithetic_capped(self):
        x = np.tile([1.0, -1.0], 500)[None, :] + 1e-3 * np.arange(1000)[None, :] % 1
        assert effective_sample_size(x) <= x.size

    def test_rejects_short(self):
        with pytest.raises(ValueError):
            effective_sample_size(np.arange(5.0))


class TestRhat:
    def test_same_target(self, rng):
        assert rhat(rng.normal(size=(4, 1000))) < 1.01

    def test_displaced(self, rng):
        x = rng.normal(size=(4, 1000))
        x[0] += 3.0
        assert rhat(x) > 1.5

    def test_copied_chains(self, rng):
        x = np.tile(rng.normal(size=1000), (4, 1))
        assert rhat(x) == pytest.approx(1.0, abs=0.01)

    def test_rejects(self, rng):
        with pytest.raises(ValueError):
            rhat(rng.normal(size=(1, 100)))
        with pytest.raises(ValueError):
            rhat(np.ones((2, 100)))


class TestHpd:
    def test_standard_normal(self, rng):
        lo, hi = hpd_interval(rng.normal(size=200_000))
        assert lo == pytest.approx(-1.96, abs=0.03)
        assert hi == pytest.approx(1.96, abs=0.03)

    def test_exponential_starts_at_zero(self, rng):
        lo, hi = hpd_interval(rng.exponential(size=200_000))
        assert lo == pytest.approx(0.0, abs=0.01)
        assert hi == pytest.approx(-np.log(0.05), abs=0.05)

    def test_mass_fraction(self, rng):
        x = rng.gamma(2.0, size=10_000)
        lo, hi = hpd_interval(x, 0.9)
        assert np.mean((x >= lo) & (x <= hi)) >= 0.9

    def test_rejects(self, rng):
        with pytest.raises(ValueError):
            hpd_interval(rng.normal(size=49))
        with pytest.raises(ValueError):
            hpd_interval(rng.normal(size=100), 1.0)


def _trace(rng, C=2, S=500):
    draws = rng.normal(size=(C, S, 2)) * [0.1, 0.5] + [np.log(2.0), 0.0]
    return Trace(("s_1", "n_2"), draws, np.zeros((C, S)), np.zeros((C, S), bool),
                 np.ones((C, S), int), np.ones(C))


class TestSummary:
    def test_theta_space(self, rng):
        tr = _trace(rng)
        s = summarize_trace(tr)
        row = s.row("s_1")
        assert row["mean"] == pytest.approx(np.exp(tr.draws[:, :, 0]).mean())
        assert row["hpd_2.5"] < row["mean"] < row["hpd_97.5"]
        assert row["mc_error"] == pytest.approx(row["sd"] / np.sqrt(row["n_eff"]))
        assert 0.98 < row["Rhat"] < 1.02

    def test_eta_space(self, rng):
        tr = _trace(rng)
        s = summarize_trace(tr, space="eta")
        assert s.row("n_2")["mean"] == pytest.approx(tr.draws[:, :, 1].mean())

    def test_single_draw_flags(self, rng):
        tr = _trace(rng, C=1, S=1)
        s = summarize_trace(tr)
        assert np.isnan(s.row("s_1")["Rhat"])
        assert ("s_1", "Rhat") in s.flags
        assert "! s_1.Rhat" in s.to_text()

    def test_csv(self, rng, tmp_path):
        s = summarize_trace(_trace(rng))
        s.to_csv(tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == "hyperparameter,mean,sd,mc_error,hpd_2.5,hpd_97.5,n_eff,Rhat"
        assert len(lines) == 3
