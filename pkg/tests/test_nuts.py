import numpy as np
import pytest
from scipy import stats

from fbgpr.diagnostics import effective_sample_size, rhat
from fbgpr.nuts import (
    NutsConfig,
    Trace,
    leapfrog,
    read_trace_csv,
    sample_nuts,
    select_prediction_chain,
)

from conftest import FlatTarget, GaussianTarget


@pytest.fixture(scope="module")
def gauss10_trace():
    target = GaussianTarget(np.zeros(10), np.eye(10))
    return sample_nuts(target, NutsConfig(chains=4, warmup=500, samples=1000, seed=1))


def _fake_trace(lp_means, divergent_chain=None, S=20):
    C = len(lp_means)
    lp = np.repeat(np.asarray(lp_means, dtype=float)[:, None], S, axis=1)
    div = np.zeros((C, S), dtype=bool)
    if divergent_chain is not None:
        div[divergent_chain, : S // 2] = True
    return Trace(("a",), np.zeros((C, S, 1)), lp, div, np.ones((C, S), int), np.ones(C))


class TestLeapfrog:
    def test_free_particle(self, rng):
        q, p = rng.normal(size=3), rng.normal(size=3)
        q2, p2, lp, _ = leapfrog(FlatTarget(), q, p, 0.3)
        np.testing.assert_allclose(q2, q + 0.3 * p, atol=1e-15)
        np.testing.assert_array_equal(p2, p)
        assert lp == 0.0

    def test_reversible(self, rng):
        t = GaussianTarget(np.zeros(4), np.diag([1.0, 2.0, 0.5, 3.0]))
        q, p = rng.normal(size=4), rng.normal(size=4)
        q1, p1, _, _ = leapfrog(t, q, p, 0.2)
        q0, p0, _, _ = leapfrog(t, q1, -p1, 0.2)
        np.testing.assert_allclose(q0, q, atol=1e-10)
        np.testing.assert_allclose(-p0, p, atol=1e-10)

    def test_energy_drift(self):
        t = GaussianTarget(np.zeros(1), np.eye(1))
        q, p = np.array([1.0]), np.array([0.5])
        H0 = -t(q) + 0.5 * p @ p
        g = None
        for _ in range(100):
            q, p, lp, g = leapfrog(t, q, p, 0.01, g)
        assert abs(-lp + 0.5 * p @ p - H0) < 1e-3


class TestSampler:
    def test_gaussian10_recovery(self, gauss10_trace):
        tr = gauss10_trace
        assert tr.draws.shape == (4, 1000, 10)
        for j in range(10):
            x = tr.draws[:, :, j]
            se = x.std() / np.sqrt(effective_sample_size(x))
            assert abs(x.mean()) < 3 * se
            assert rhat(x) < 1.01

    def test_adaptation_contract(self, gauss10_trace):
        acc = gauss10_trace.accept_stat.mean()
        assert 0.7 <= acc <= 0.9

    def test_tree_depth_cap(self, gauss10_trace):
        assert gauss10_trace.tree_depth.max() <= 10
        assert not gauss10_trace.divergent.any()

    def test_chains_differ(self, gauss10_trace):
        d = gauss10_trace.draws
        assert not np.array_equal(d[0], d[1])

    def test_ks_1d(self):
        t = GaussianTarget(np.zeros(1), np.eye(1))
        tr = sample_nuts(t, NutsConfig(chains=4, warmup=300, samples=1000, seed=3))
        ks = stats.kstest(tr.draws.reshape(-1), "norm").statistic
        assert ks < 0.05

    def test_correlated(self):
        cov = np.array([[1.0, 0.9], [0.9, 1.0]])
        tr = sample_nuts(GaussianTarget(np.zeros(2), cov), NutsConfig(chains=4, warmup=500, samples=1000, seed=2))
        x = tr.draws.reshape(-1, 2)
        assert abs(np.corrcoef(x.T)[0, 1] - 0.9) < 0.05

    def test_deterministic(self):
        t = GaussianTarget(np.ones(3), np.eye(3))
        cfg = NutsConfig(chains=2, warmup=50, samples=50, seed=11)
        a = sample_nuts(t, cfg)
        b = sample_nuts(t, cfg)
        np.testing.assert_array_equal(a.draws, b.draws)
        np.testing.assert_array_equal(a.lp, b.lp)

    def test_process_pool_matches_serial(self):
        t = GaussianTarget(np.zeros(2), np.eye(2))
        cfg = NutsConfig(chains=2, warmup=30, samples=30, seed=4)
        np.testing.assert_array_equal(sample_nuts(t, cfg).draws, sample_nuts(t, cfg, n_jobs=2).draws)

    def test_init_respected(self):
        from fbgpr.nuts import _initial_state

        t = GaussianTarget(np.zeros(2), np.eye(2))
        z = _initial_state(t, np.random.default_rng(0), np.array([5.0, -3.0]), 2.0, 2)
        np.testing.assert_array_equal(z.q, [5.0, -3.0])
        assert z.lp == pytest.approx(-17.0)

    def test_init_must_be_finite(self):
        class Walled(GaussianTarget):
            def value_and_grad(self, x):
                if x[0] > 0:
                    return -np.inf, np.zeros(2)
                return super().value_and_grad(x)

        t = Walled(np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            sample_nuts(t, NutsConfig(chains=1, warmup=1, samples=1), init=np.array([1.0, 0.0]))
        tr = sample_nuts(t, NutsConfig(chains=2, warmup=100, samples=200, seed=0))
        assert np.all(tr.draws[:, :, 0] <= 0)

    @pytest.mark.parametrize(
        "kw", [dict(warmup=0), dict(samples=0), dict(target_accept=1.0), dict(chains=0)]
    )
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            NutsConfig(**kw)


class TestSelection:
    def test_single_chain(self):
        assert select_prediction_chain(_fake_trace([-7.0])) == 0

    def test_argmax_first_tie(self):
        tr = _fake_trace([-5, -3, -4, -3])
        assert select_prediction_chain(tr) == 1
        assert tr.metadata["selection"]["chain"] == 1

    def test_unhealthy_skipped(self):
        tr = _fake_trace([-1.0, -10.0], divergent_chain=0)
        assert select_prediction_chain(tr) == 1

    def test_all_unhealthy(self):
        tr = _fake_trace([-1.0], divergent_chain=0)
        with pytest.raises(RuntimeError):
            select_prediction_chain(tr)


def test_trace_csv_round_trip(tmp_path):
    t = GaussianTarget(np.zeros(2), np.eye(2))
    tr = sample_nuts(t, NutsConfig(chains=2, warmup=20, samples=15, seed=0))
    tr.to_csv(tmp_path / "t.csv")
    tr.write_metadata(tmp_path / "t.json")
    back = read_trace_csv(tmp_path / "t.csv", tmp_path / "t.json")
    assert back.names == tr.names
    np.testing.assert_array_equal(back.draws, tr.draws)
    np.testing.assert_array_equal(back.lp, tr.lp)
    np.testing.assert_array_equal(back.step_size, tr.step_size)
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "chain,draw,x_1,x_2,lp,divergent,tree_depth"
