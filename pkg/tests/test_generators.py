import math

import numpy as np
import pytest
from scipy import stats as sps

from honest_times.engine import Probes, simulate_summaries
from honest_times.generators import (
    Deterministic,
    Family,
    GeneratorSpec,
    LevelHit,
    bridge_supremum,
    complete_supremum,
    default_grid,
    generate,
    path_rng,
    sample_stopping_time,
    tail_complete,
    tail_uniform,
)
from honest_times.paths import TimeGrid, rho_min, running_supremum

from conftest import make_path

GBM = Family.GEOMETRIC_BROWNIAN
BM = Family.STOPPED_BROWNIAN
JUMP = Family.EXP_JUMP_COUNTEREXAMPLE


def spec(family, step=2**-6, horizon=4.0, **kw):
    return GeneratorSpec(family, TimeGrid.from_horizon(step, horizon), **kw)


class TestReproducibility:
    @pytest.mark.parametrize("family", list(Family))
    def test_pure_function_of_seed_and_index(self, family):
        s = spec(family, seed=11)
        np.testing.assert_array_equal(generate(s, 5).values, generate(s, 5).values)
        assert not np.array_equal(generate(s, 5).values, generate(s, 6).values)

    def test_order_of_generation_is_irrelevant(self):
        s = spec(GBM, seed=3)
        forward = [generate(s, i).values for i in range(6)]
        backward = [generate(s, i).values for i in reversed(range(6))][::-1]
        for a, b in zip(forward, backward):
            np.testing.assert_array_equal(a, b)

    def test_streams_are_distinct(self):
        a = path_rng(1, 0, 0).random(4)
        b = path_rng(1, 0, 1).random(4)
        c = path_rng(1, 1, 0).random(4)
        assert not np.array_equal(a, b) and not np.array_equal(a, c)

    def test_seed_changes_paths(self):
        assert not np.array_equal(generate(spec(GBM, seed=1), 0).values, generate(spec(GBM, seed=2), 0).values)


class TestGeometricBrownian:
    def test_starts_at_one_and_positive(self):
        p = generate(spec(GBM), 0)
        assert p.values[0] == 1.0
        assert np.all(p.values > 0)

    def test_terminal_log_law(self):
        sigma, horizon = 1.3, 2.0
        s = spec(GBM, step=2**-4, horizon=horizon, sigma=sigma, seed=4)
        logs = np.array([math.log(generate(s, i).terminal_value) for i in range(4000)])
        ref = sps.norm(loc=-0.5 * sigma**2 * horizon, scale=sigma * math.sqrt(horizon))
        assert sps.kstest(logs, ref.cdf).pvalue > 1e-3

    def test_martingale_mean(self):
        s = spec(GBM, step=2**-3, horizon=1.0, seed=9)
        ends = np.array([generate(s, i).terminal_value for i in range(20000)])
        assert abs(ends.mean() - 1.0) < 4 * ends.std(ddof=1) / math.sqrt(ends.size)


class TestStoppedBrownian:
    def test_absorbed_at_first_nonpositive_value(self):
        s = spec(BM, step=2**-2, horizon=64.0, seed=1)
        hits = 0
        for i in range(200):
            p = generate(s, i)
            assert np.all(p.values >= 0)
            if p.absorbed:
                hits += 1
                k = p.absorbed_index
                assert np.all(p.values[:k] > 0)
                assert np.all(p.values[k:] == 0)
        assert hits > 100

    def test_increments_are_gaussian(self):
        s = spec(BM, step=2**-4, horizon=0.25, seed=2)
        inc = np.array([generate(s, i).values[1] - 1.0 for i in range(3000)])
        assert sps.kstest(inc, sps.norm(scale=0.25).cdf).pvalue > 1e-3


class TestCounterexample:
    def test_value_zero_at_jump_and_sup_unattained(self):
        s = spec(JUMP, step=2**-6, horizon=64.0, seed=5)
        for i in range(300):
            p = generate(s, i)
            (jump,) = p.jumps
            k = p.grid.index_at_or_after(jump.time)
            assert p.values[k] == 0.0
            assert p.analytic_terminal_sup == math.exp(jump.time)
            assert not rho_min(p, running_supremum(p)).finite

    def test_jump_time_is_exponential(self):
        s = spec(JUMP, step=2**-6, horizon=64.0, seed=6)
        taus = np.array([generate(s, i).jumps[0].time for i in range(3000)])
        assert sps.kstest(taus, "expon").pvalue > 1e-3

    def test_bridge_rejected(self):
        with pytest.raises(ValueError):
            spec(JUMP, bridge_max=True)


class TestDefaultGridsAbsorb:
    # At least 99% of paths must have a negligible terminal value on the default grid.
    @pytest.mark.parametrize("family", [GBM, BM])
    def test_terminal_values_small(self, family):
        s = GeneratorSpec(family, default_grid(family), seed=21)
        summary = simulate_summaries(s, 4000, Probes())
        assert np.mean(summary.terminal < 1e-3) >= 0.99

    def test_counterexample(self):
        s = GeneratorSpec(JUMP, default_grid(JUMP), seed=21)
        ends = np.array([generate(s, i).terminal_value for i in range(2000)])
        assert np.mean(ends < 1e-3) >= 0.99


class TestTailCompletion:
    def test_small_terminal_value(self):
        c = complete_supremum(0.001, 3.0, 0.5)
        assert c.future_sup == pytest.approx(0.002)
        assert c.completed_terminal_sup == 3.0
        assert not c.beyond_horizon

    def test_large_terminal_value(self):
        c = complete_supremum(2.0, 3.0, 0.5)
        assert c.future_sup == 4.0
        assert c.completed_terminal_sup == 4.0
        assert c.beyond_horizon

    def test_on_path(self):
        p = make_path([1.0, 3.0, 2.0])
        c = tail_complete(p, 0.5)
        assert (c.future_sup, c.completed_terminal_sup, c.beyond_horizon) == (4.0, 4.0, True)

    def test_rejects_jump_and_absorbed_paths(self):
        s = spec(JUMP, horizon=64.0)
        with pytest.raises(ValueError):
            tail_complete(generate(s, 0), 0.5)
        with pytest.raises(ValueError):
            tail_complete(make_path([1.0, 0.0], absorbed_index=1), 0.5)

    def test_uniform_range_and_determinism(self):
        u = [tail_uniform(3, i) for i in range(1000)]
        assert all(0 < x <= 1 for x in u)
        assert u[7] == tail_uniform(3, 7)

    def test_completed_supremum_restores_doob_law(self):
        # A short horizon leaves most of the supremum unobserved; completion recovers P[sup > x] = 1/x.
        s = spec(GBM, step=2**-4, horizon=1.0, seed=8)
        n = 20000
        sups = np.empty(n)
        for i in range(n):
            p = generate(s, i)
            sups[i] = tail_complete(p, tail_uniform(s.seed, i), bridge_supremum(s, p, i).terminal).completed_terminal_sup
        for x in (2.0, 4.0, 8.0):
            se = math.sqrt((1 / x) * (1 - 1 / x) / n)
            assert abs(np.mean(sups > x) - 1 / x) < 4 * se


class TestBridgeSupremum:
    @staticmethod
    def _max_cdf(y, horizon):
        # Running maximum of W_t - t/2 on [0, T].
        rt = math.sqrt(horizon)
        return sps.norm.cdf((y + horizon / 2) / rt) - np.exp(-y) * sps.norm.cdf((-y + horizon / 2) / rt)

    def test_matches_closed_form_law_on_coarse_grid(self):
        horizon = 1.0
        s = spec(GBM, step=0.25, horizon=horizon, seed=13, bridge_max=True)
        logs = np.array([math.log(bridge_supremum(s, generate(s, i), i).terminal) for i in range(4000)])
        assert sps.kstest(logs, lambda y: self._max_cdf(y, horizon)).pvalue > 1e-3

    def test_grid_maximum_alone_is_biased(self):
        horizon = 1.0
        s = spec(GBM, step=0.25, horizon=horizon, seed=13)
        logs = np.array([math.log(generate(s, i).values.max()) for i in range(4000)])
        assert sps.kstest(logs, lambda y: self._max_cdf(y, horizon)).pvalue < 1e-6

    def test_dominates_grid_supremum(self):
        s = spec(BM, step=2**-3, horizon=8.0, seed=4, bridge_max=True)
        for i in range(50):
            p = generate(s, i)
            b = bridge_supremum(s, p, i)
            g = running_supremum(p)
            assert np.all(b.values >= g.values)
            assert np.all(np.diff(b.values) >= 0)


class TestStoppingTimes:
    def test_deterministic_zero(self):
        assert sample_stopping_time(generate(spec(GBM), 0), Deterministic(0.0)).grid_index == 0

    def test_deterministic_rounds_up(self):
        p = generate(spec(GBM, step=0.25), 0)
        assert sample_stopping_time(p, Deterministic(0.3)).grid_index == 2

    def test_level_one_is_time_zero(self):
        for family in (GBM, BM):
            assert sample_stopping_time(generate(spec(family), 1), LevelHit(1.0)).grid_index == 0

    def test_huge_level_never_hit(self):
        s = spec(BM, step=2**-4, horizon=16.0, seed=3)
        hits = [sample_stopping_time(generate(s, i), LevelHit(1e10)).finite for i in range(500)]
        assert not any(hits)
