import numpy as np
import pytest
from hypothesis import given, strategies as st

from astar_irl.belief import (
    BeliefState,
    SensorModelParams,
    belief_param_grad,
    inverse_log_odds,
    occupancy_prob,
    replay,
    sigmoid,
    update_belief,
)
from astar_irl.gridworld import DatasetConfig, generate_dataset
from astar_irl.sensor import SensorConfig

SHAPE = (8, 8)
# four beams: +x, +y, -x, -y; beam 0 marches along row 2 from (0, 2)
POSE = (0, 2)


def scan(z0, mr=5.0):
    return np.array([z0, mr, mr, mr])


def cell(x, y, width=8):
    return y * width + x


class TestInverseModel:
    def test_endpoint_gives_zero(self):
        p = SensorModelParams(np.array([2.0, 1, 1, 1]), h0=0.3, epsilon=1.0)
        g = inverse_log_odds(POSE, scan(3.0), p, SHAPE, 5.0)
        assert g[cell(3, 2)] == pytest.approx(0.0)

    def test_one_before_endpoint(self):
        p = SensorModelParams(np.array([2.0, 1, 1, 1]), h0=0.3, epsilon=1.0)
        g = inverse_log_odds(POSE, scan(3.0), p, SHAPE, 5.0)
        assert g[cell(2, 2)] == pytest.approx(-2.0)

    def test_beyond_band_is_prior(self):
        p = SensorModelParams(np.array([2.0, 1, 1, 1]), h0=0.3, epsilon=1.0)
        g = inverse_log_odds(POSE, scan(1.9), p, SHAPE, 5.0)
        # dz = 3 - 1.9 = eps + 0.1
        assert g[cell(3, 2)] == 0.3
        h = np.full(64, 0.7)
        assert update_belief(h, g, 0.3)[cell(3, 2)] == 0.7

    def test_unreached_cells_are_prior(self):
        p = SensorModelParams(np.ones(4), h0=-0.4, epsilon=1.0)
        g = inverse_log_odds(POSE, scan(3.0), p, SHAPE, 5.0)
        assert g[cell(6, 6)] == -0.4

    def test_field_of_view(self):
        # a no-return beam leaves cells past max_range untouched
        p = SensorModelParams(np.ones(4), h0=0.0, epsilon=1.0)
        g = inverse_log_odds(POSE, scan(2.5, 2.5), p, SHAPE, 2.5)
        assert g[cell(3, 2)] == 0.0
        assert g[cell(2, 2)] < 0.0

    def test_epsilon_must_be_positive(self):
        with pytest.raises(ValueError):
            SensorModelParams(np.ones(1), epsilon=0.0)


class TestUpdate:
    def test_no_information(self):
        h = np.linspace(-2, 2, 9)
        assert np.array_equal(update_belief(h, np.full(9, 0.5), 0.5), h)

    @given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(-1, 1))
    def test_updates_commute(self, vals, h0):
        h = np.zeros(2)
        g1, g2 = np.array(vals[:2]), np.array(vals[2:4])
        a = update_belief(update_belief(h, g1, h0), g2, h0)
        b = update_belief(update_belief(h, g2, h0), g1, h0)
        assert np.allclose(a, b) and np.allclose(a, h + (g1 - h0) + (g2 - h0))

    def test_repeated_occupied_evidence_converges(self):
        p = SensorModelParams(np.ones(4), epsilon=1.0)
        b = BeliefState(SHAPE, p, 5.0)
        probs = []
        for _ in range(30):
            b.observe(POSE, scan(2.6))  # cell (3, 2) sits at dz = +0.4
            probs.append(occupancy_prob(b.h)[cell(3, 2)])
        assert np.all(np.diff(probs) > 0) and probs[-1] > 0.99999


class TestSigmoid:
    def test_half_at_zero(self):
        assert occupancy_prob(np.zeros(1))[0] == 0.5

    @given(st.floats(-30, 30))
    def test_complement(self, x):
        assert sigmoid(x) + sigmoid(-x) == pytest.approx(1.0, abs=1e-12)

    @given(st.floats(-30, 30))
    def test_log_ratio(self, x):
        assert np.log(sigmoid(x) / sigmoid(-x)) == pytest.approx(x, abs=1e-9)


def _demo():
    _, demos = generate_dataset(DatasetConfig(n_maps=1, trajs_per_map=1, width=10, height=10, seed=4),
                                SensorConfig(noise_sigma=0.05))
    return demos[0]


def _filter(demo, psi, h0, eps=0.5, gammas=None):
    b = BeliefState((demo.height, demo.width), SensorModelParams(psi, h0, eps), demo.max_range)
    for t, (s, z) in enumerate(zip(demo.states, demo.scans)):
        b.observe(s, z)
        if gammas is not None:
            b.decay(gammas[t % len(gammas)])
    return b


class TestParamGrad:
    def test_prior_only(self):
        d, g = belief_param_grad([], 5, 3)
        assert np.array_equal(d, np.zeros(3)) and g == 1.0

    def test_affine_coefficient(self):
        p = SensorModelParams(np.ones(4), epsilon=1.0)
        b = BeliefState(SHAPE, p, 5.0)
        b.observe(POSE, scan(2.6))
        d, _ = belief_param_grad(b.tape, cell(3, 2), 4)
        assert d[0] == pytest.approx(0.4)

    @pytest.mark.parametrize("gammas", [None, [1.0, 0.97]])
    def test_finite_difference(self, gammas):
        demo = _demo()
        K = len(demo.scans[0])
        rng = np.random.default_rng(0)
        psi = rng.uniform(0.5, 2.0, K)
        h0 = 0.2
        base = _filter(demo, psi, h0, gammas=gammas)
        touched = np.unique(np.concatenate([e.cells for e in base.tape]))
        step = 1e-5
        for k in rng.choice(K, 6, replace=False):
            e = np.zeros(K)
            e[k] = step
            fd = (_filter(demo, psi + e, h0, gammas=gammas).h - _filter(demo, psi - e, h0, gammas=gammas).h) / (2 * step)
            assert np.allclose(base.dpsi[:, k], fd, rtol=1e-6, atol=1e-8)
        fd = (_filter(demo, psi, h0 + step, gammas=gammas).h - _filter(demo, psi, h0 - step, gammas=gammas).h) / (2 * step)
        assert np.allclose(base.dh0, fd, rtol=1e-6, atol=1e-8)
        for j in touched[:10]:
            d, g = belief_param_grad(base.tape, int(j), K)
            assert np.allclose(d, base.dpsi[j]) and g == pytest.approx(base.dh0[j])

    def test_affine_in_parameters(self):
        demo = _demo()
        K = len(demo.scans[0])
        a, b = np.full(K, 0.5), np.full(K, 2.0)
        ha, hb = _filter(demo, a, -0.5).h, _filter(demo, b, 0.5).h
        hm = _filter(demo, (a + b) / 2, 0.0).h
        assert np.allclose(hm, (ha + hb) / 2, atol=1e-12)

    def test_replay_bit_identical(self):
        demo = _demo()
        K = len(demo.scans[0])
        b = _filter(demo, np.ones(K), 0.1, gammas=[0.99])
        r = replay(b.tape, b.shape, b.params, b.max_range)
        assert np.array_equal(r.h, b.h) and np.array_equal(r.dpsi, b.dpsi)

    def test_shared_psi(self):
        demo = _demo()
        K = len(demo.scans[0])
        shared = _filter(demo, np.array([1.3]), 0.0)
        full = _filter(demo, np.full(K, 1.3), 0.0)
        assert np.allclose(shared.h, full.h)
        assert np.allclose(shared.dpsi[:, 0], full.dpsi.sum(axis=1))


def test_disjoint_cells_any_order():
    p = SensorModelParams(np.ones(4), epsilon=1.0)
    a, b = BeliefState(SHAPE, p, 5.0), BeliefState(SHAPE, p, 5.0)
    a.observe((0, 2), scan(2.6))
    a.observe((7, 7), np.array([5.0, 5.0, 1.2, 5.0]))
    b.observe((7, 7), np.array([5.0, 5.0, 1.2, 5.0]))
    b.observe((0, 2), scan(2.6))
    assert np.array_equal(a.h, b.h)


def test_decay_pulls_to_prior():
    p = SensorModelParams(np.ones(4), h0=-1.0, epsilon=1.0)
    b = BeliefState(SHAPE, p, 5.0)
    b.observe(POSE, scan(2.6))
    before = b.h.copy()
    b.decay(0.5)
    assert np.allclose(b.h, -1.0 + 0.5 * (before + 1.0))


def test_clamp_bounds_log_odds():
    p = SensorModelParams(np.full(4, 50.0), epsilon=1.0)
    b = BeliefState(SHAPE, p, 5.0, clamp=3.0)
    for _ in range(5):
        b.observe(POSE, scan(2.6))
    assert np.abs(b.h).max() <= 3.0
