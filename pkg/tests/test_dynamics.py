import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from kcm import dynamics
from kcm.dynamics import (RandomnessStream, hitting_time_tau_star, influence_region,
                          legal_time_measure, restricted_consistency_check, simulate)
from kcm.errors import RangeError, ValidationError
from kcm.lattice import Model, constraint_vector
from kcm.measure import config_to_id

NE22 = Model.build(2, 2, 0.3)
NE24 = Model.build(2, 4, 0.3)


def ones(m):
    return np.ones(m.n_sites, dtype=np.uint8)


def test_zero_horizon():
    log = simulate(NE24, None, ones(NE24), 0.0, RandomnessStream(1))
    assert len(log) == 0 and np.array_equal(log.final, log.initial)


def test_determinism():
    a = simulate(NE24, None, ones(NE24), 10.0, RandomnessStream(7))
    b = simulate(NE24, None, ones(NE24), 10.0, RandomnessStream(7))
    c = simulate(NE24, None, ones(NE24), 10.0, RandomnessStream(8))
    assert a.same_records(b) and np.array_equal(a.final, b.final)
    assert not a.same_records(c)


@given(st.integers(0, 2 ** 64 - 1), st.sampled_from(["northeast", "maximal"]),
       st.sampled_from([(1, 4), (2, 3), (3, 2)]), st.floats(0.0, 15.0))
def test_event_log_invariants(seed, family, box, horizon):
    m = Model.build(*box, 0.35, family)
    rng = np.random.default_rng(seed % 2 ** 32)
    init = (rng.random(m.n_sites) < 0.5).astype(np.uint8)
    log = simulate(m, None, init, horizon, RandomnessStream(seed))
    assert np.all(np.diff(log.times) >= 0)
    assert np.all(log.times <= horizon)
    assert np.array_equal(log.applied.astype(bool), log.constraint.astype(bool))
    assert np.array_equal(log.replay(), log.final)
    # constraint values recomputed from the replayed trajectory
    state = init.copy()
    for x, c, s, a in zip(log.sites, log.constraint, log.coin, log.applied):
        assert constraint_vector(m, state)[x] == c
        if a:
            state[x] = s


def test_event_log_csv(tmp_path):
    log = simulate(NE22, None, ones(NE22), 3.0, RandomnessStream(2))
    log.to_csv(tmp_path / "e.csv", NE22)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "time,site_x1,site_x2,constraint,coin,applied"
    assert len(lines) == len(log) + 1


def test_region_validation():
    g = NE24.geometry
    with pytest.raises(ValidationError):
        simulate(NE24, [g.index((2, 2))], [1], 1.0, RandomnessStream(0))
    with pytest.raises(RangeError):
        simulate(NE24, None, ones(NE24), 2.0 ** 41, RandomnessStream(0))
    with pytest.raises(ValidationError):
        RandomnessStream(-1)


def test_same_site_same_sequence_in_any_region():
    """A site's rings and coins depend only on (seed, coordinates)."""
    m = NE24
    for i in (3, 5, 8):
        U = m.geometry.lower_set(i)
        log = simulate(m, U, np.zeros(U.size, dtype=np.uint8), 5.0, RandomnessStream(9))
        full = simulate(m, None, np.zeros(m.n_sites, dtype=np.uint8), 5.0, RandomnessStream(9))
        for x in U:
            assert np.array_equal(log.times[log.sites == x], full.times[full.sites == x])
            assert np.array_equal(log.coin[log.sites == x], full.coin[full.sites == x])


def test_single_site_marginal_closed_form():
    m = Model.build(1, 1, 0.3)
    states = dynamics.final_state_samples(m, 123, 100_000, [1], 2.0)
    p_hat = states.mean()
    p_true = 0.3 + 0.7 * math.exp(-2.0)
    se = math.sqrt(p_true * (1 - p_true) / states.size)
    assert abs(p_hat - p_true) < 3 * se


def test_restricted_consistency_examples():
    init = ones(NE24)
    for seed in range(10):
        assert restricted_consistency_check(NE24, 5, init, 20.0, RandomnessStream(seed))
        assert restricted_consistency_check(NE24, 8, init, 20.0, RandomnessStream(seed))


def test_restricted_consistency_negative_control():
    init = ones(NE24)
    bad = [restricted_consistency_check(NE24, 5, init, 20.0, RandomnessStream(s),
                                        RandomnessStream(s, "enumeration")) for s in range(20)]
    assert not all(bad)


def test_tau_star_trivial_and_samples():
    init = ones(NE22)
    init[-1] = 0
    assert hitting_time_tau_star(NE22, RandomnessStream(0), 100.0, init) == 0.0
    assert dynamics.hitting_time_samples(NE22, 0, 5, 100.0, init).tolist() == [0.0] * 5
    assert math.isinf(hitting_time_tau_star(NE24, RandomnessStream(0), 1e-9))


def test_legal_time_trivial_cases():
    for seed in range(5):
        assert legal_time_measure(NE24, (1, 1), 7.5, RandomnessStream(seed)) == 7.5
    # (2,2) with both constraining spins 1 until the first rings of (1,2), (2,1)
    init = ones(NE22)
    log = simulate(NE22, None, init, 50.0, RandomnessStream(4))
    g = NE22.geometry
    nb = [g.index((1, 2)), g.index((2, 1))]
    first = min(log.times[np.isin(log.sites, nb)])
    assert legal_time_measure(NE22, (2, 2), first * 0.999, RandomnessStream(4), init) == 0.0


@pytest.mark.parametrize("seed", range(8))
def test_legal_time_matches_event_log_integral(seed):
    m = Model.build(2, 3, 0.4)
    y = m.geometry.index((3, 3))
    init = (np.random.default_rng(seed).random(m.n_sites) < 0.4).astype(np.uint8)
    horizon = 12.0
    log = simulate(m, None, init, horizon, RandomnessStream(seed))
    state, t_prev, total = init.copy(), 0.0, 0.0
    for t, x, s, a in zip(log.times, log.sites, log.coin, log.applied):
        if constraint_vector(m, state)[y]:
            total += t - t_prev
        t_prev = t
        if a:
            state[x] = s
    if constraint_vector(m, state)[y]:
        total += horizon - t_prev
    assert legal_time_measure(m, y, horizon, RandomnessStream(seed), init) == pytest.approx(total, abs=1e-9)


@pytest.mark.parametrize("family", ["northeast", "maximal"])
def test_batch_kernels_match_single_trajectories(family):
    m = Model.build(2, 3, 0.3, family)
    seed, R = 99, 12
    init = ones(m)
    finals = dynamics.final_state_samples(m, seed, R, init, 6.0)
    taus = dynamics.hitting_time_samples(m, seed, R, 400.0)
    flips = dynamics.first_flip_samples(m, seed, R, 6.0)
    legal = dynamics.legal_time_samples(m, (3, 3), seed, R, 6.0)
    for r in range(R):
        st_r = RandomnessStream(seed).replica(r)
        assert finals[r] == config_to_id(simulate(m, None, init, 6.0, st_r).final)
        assert taus[r] == hitting_time_tau_star(m, st_r, 400.0)
        assert np.array_equal(flips[r], influence_region(m, st_r, 6.0).first_flip)
        assert legal[r] == pytest.approx(legal_time_measure(m, (3, 3), 6.0, st_r), abs=1e-12)


def test_batch_results_independent_of_threads():
    dynamics.set_threads(1)
    a = dynamics.final_state_samples(NE24, 5, 200, ones(NE24), 4.0)
    dynamics.set_threads(64)
    b = dynamics.final_state_samples(NE24, 5, 200, ones(NE24), 4.0)
    dynamics.set_threads(None)
    assert np.array_equal(a, b)


def test_ring_counts_are_poisson():
    t = 3.0
    counts = dynamics.ring_count_samples(NE24, (2, 3), 2024, 100_000, t)
    kmax = 10
    obs = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
    probs = scipy.stats.poisson.pmf(np.arange(kmax), t)
    probs = np.append(probs, 1 - probs.sum())
    _, pval = scipy.stats.chisquare(obs, probs * counts.size)
    assert pval > 1e-3


def test_ring_counts_match_event_log():
    log = simulate(NE24, None, ones(NE24), 3.0, RandomnessStream(0).replica(4))
    counts = dynamics.ring_count_samples(NE24, (2, 3), 0, 5, 3.0)
    assert counts[4] == np.sum(log.sites == NE24.geometry.index((2, 3)))


def test_law_matches_exact_small_east_chain():
    from kcm import exact
    from kcm.measure import DistributionVector, tv_distance
    m = Model.build(1, 3, 0.3)
    states = dynamics.final_state_samples(m, 31, 100_000, ones(m), 1.5)
    emp = np.bincount(states, minlength=8) / states.size
    gen = exact.build_generator(m)
    ex = exact.evolve_distribution(gen, DistributionVector.point_mass((0, 1, 2), [1, 1, 1]), 1.5)
    assert tv_distance(emp, ex.weights) <= 0.01


def test_influence_region():
    inf = influence_region(NE24, RandomnessStream(3), 20.0, snapshots=(0.0, 5.0, 10.0, 20.0))
    assert not inf.snapshots[0.0].any()
    ts = sorted(inf.snapshots)
    for a, b in zip(ts, ts[1:]):
        assert np.all(inf.snapshots[b] | ~inf.snapshots[a])
    assert np.array_equal(inf.sites_at(10.0), np.flatnonzero(inf.mask_at(10.0).ravel()))
    with pytest.raises(RangeError):
        influence_region(NE24, RandomnessStream(3), 20.0, snapshots=(25.0,))
    legal = influence_region(NE24, RandomnessStream(3), 20.0, flip_on_change=False)
    assert np.all(legal.first_flip <= inf.first_flip)  # any legal ring counts earlier


def test_flip_means_value_change():
    log = simulate(NE24, None, ones(NE24), 20.0, RandomnessStream(3))
    inf = influence_region(NE24, RandomnessStream(3), 20.0)
    state, first = log.initial.copy(), np.full(NE24.n_sites, np.inf)
    for t, x, s, a in zip(log.times, log.sites, log.coin, log.applied):
        if a and state[x] != s and first[x] == np.inf:
            first[x] = t
        if a:
            state[x] = s
    assert np.array_equal(first, inf.first_flip)
