import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from clanmc import (DomainError, EnvironmentPath, NumericalFailureError, RngStream,
                    build_walk, h_functional, initial_state, simulate,
                    simulate_ensemble, step)
from clanmc.clan_sim import PopulationState, final_clans_ensemble


@pytest.fixture
def stream():
    return RngStream(880011)


class TestStep:
    def test_extinct_clans_leave_only_immigrant(self, stream):
        state = PopulationState(clans=np.zeros(3, dtype=np.int64), generation=3)
        nxt = step(state, 1.7, stream.substream("t", 0))
        assert nxt.generation == 4
        assert nxt.total == 1
        assert nxt.clans[-1] == 1 and np.all(nxt.clans[:-1] == 0)

    def test_reproduction_mean(self, stream):
        y, m, reps = 100, 1.5, 100_000
        gen = stream.substream("t.mean", 0)
        draws = np.array([
            step(PopulationState(np.array([y], dtype=np.int64), 0), m, gen).clans[0]
            for _ in range(reps // 100)
        ], dtype=float)
        # one negative-binomial draw per clan; vectorized path for the bulk
        q = 1.0 / (1.0 + m)
        bulk = gen.negative_binomial(y, q, size=reps).astype(float)
        draws = np.concatenate([draws, bulk])
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - y * m) <= 3 * se

    def test_single_geometric_extinction_prob(self, stream):
        gen = stream.substream("t.geom", 0)
        zero = gen.negative_binomial(1, 0.5, size=100_000) == 0
        se = math.sqrt(0.25 / zero.size)
        assert abs(zero.mean() - 0.5) <= 3 * se

    def test_population_conservation(self, stream):
        state = initial_state()
        gen = stream.substream("t.conserve", 0)
        for t in range(1, 6):
            state = step(state, 1.2, gen)
            assert state.generation == t
            assert state.clans.size == t + 1
            assert state.clans[-1] == 1  # immigrant enters after reproduction

    def test_overflow_aborts(self, stream):
        path = EnvironmentPath(np.full(8, 5.0))  # mean offspring e^5 per generation
        with pytest.raises(NumericalFailureError):
            for rep in range(200):
                simulate(path, 0, stream.substream("t.overflow", rep))


class TestSimulate:
    def test_deterministic_given_stream(self, stream):
        path = EnvironmentPath(np.array([0.3, -0.2, 0.5]))
        a = simulate(path, 1, stream.substream("t.det", 4))
        b = simulate(path, 1, stream.substream("t.det", 4))
        assert (a.z_in, a.y_minus, a.event_a) == (b.z_in, b.y_minus, b.event_a)

    def test_index_domain(self, stream):
        path = EnvironmentPath(np.zeros(3))
        with pytest.raises(DomainError):
            simulate(path, 3, stream.substream("t", 0))

    def test_event_requires_sole_survivor(self, stream):
        path = EnvironmentPath(np.zeros(4))
        out = simulate(path, 2, stream.substream("t.ev", 0))
        if out.event_a:
            assert out.y_minus > 0 and out.z_in == out.y_minus

    def test_one_step_event_probability(self, stream):
        m = math.exp(0.4)
        path = EnvironmentPath(np.array([0.4]))
        _, _, event = simulate_ensemble(path, 0, 200_000, stream)
        p_exact = m / (1.0 + m)
        se = math.sqrt(p_exact * (1 - p_exact) / event.size)
        assert abs(event.mean() - p_exact) <= 3 * se

    def test_ensemble_matches_h_functional(self, stream):
        path = EnvironmentPath(np.zeros(8))
        w = build_walk(path)
        z_in, _, event = simulate_ensemble(path, 3, 50_000, stream)
        for s in (0.0, 0.5):
            vals = np.where(event, 1.0 - s**z_in, 0.0)
            target = h_functional(w, 3, 8, s).value
            se = vals.std(ddof=1) / math.sqrt(vals.size)
            assert abs(vals.mean() - target) <= 3 * se

    def test_events_disjoint_within_realization(self, stream):
        rng = np.random.default_rng(7)
        path = EnvironmentPath(rng.normal(0, 1, 6))
        clans = final_clans_ensemble(path, 20_000, stream)
        totals = clans.sum(axis=1)
        sole = (clans == totals[:, None]) & (totals[:, None] > 0)
        assert np.all(sole.sum(axis=1) <= 1)

    def test_ensemble_deterministic(self, stream):
        path = EnvironmentPath(np.array([0.1, -0.4]))
        a = final_clans_ensemble(path, 5_000, stream)
        b = final_clans_ensemble(path, 5_000, stream)
        assert np.array_equal(a, b)


def test_trajectory_dump(tmp_path, stream):
    from clanmc.clan_sim import dump_trajectory_csv

    path = EnvironmentPath(np.array([0.2, -0.1, 0.3]))
    out = tmp_path / "traj.csv"
    dump_trajectory_csv(path, stream.substream("t.dump", 0), out)
    lines = out.read_text().splitlines()
    assert lines[0] == "generation,clan_index,clan_size"
    rows = [tuple(int(v) for v in line.split(",")) for line in lines[1:]]
    assert rows[0] == (0, 0, 1)
    # one row per clan per generation; immigrants appear except at the end
    per_gen = {g: [r for r in rows if r[0] == g] for g in range(4)}
    assert len(per_gen[1]) == 2 and per_gen[1][-1][2] == 1
    assert len(per_gen[3]) == 3  # final generation observed pre-immigration


class TestNegativeBinomialAggregation:
    def test_matches_per_individual_sum_in_distribution(self, stream):
        y, m, reps = 10, 2.0, 100_000
        q = 1.0 / (1.0 + m)
        gen = stream.substream("t.ks", 0)
        aggregated = gen.negative_binomial(y, q, size=reps)
        # per-individual route: sum of y independent geometric(q) failure counts
        individual = (gen.geometric(q, size=(reps, y)) - 1).sum(axis=1)
        assert ks_2samp(aggregated, individual).pvalue > 0.001
