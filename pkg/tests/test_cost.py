import numpy as np
import pytest
from hypothesis import given, strategies as st

from astar_irl.cost import CostEncoderParams, cost_field, cost_grads, expected_cost, successor_table, write_cost_csv
from astar_irl.gridworld import Control

SHAPE = (5, 6)
P = CostEncoderParams(1.0, 100.0)


def h_const(v):
    return np.full(SHAPE[0] * SHAPE[1], float(v))


def test_certainly_free_costs_s():
    assert expected_cost(h_const(-60), SHAPE, (2, 2), Control.E, P) == pytest.approx(1.0)


def test_certainly_occupied_costs_l():
    h = h_const(-60)
    h[2 * 6 + 3] = 60
    assert expected_cost(h, SHAPE, (2, 2), Control.E, P) == pytest.approx(100.0)


def test_unknown_cells():
    assert expected_cost(h_const(0), SHAPE, (2, 2), Control.E, P) == pytest.approx(75.25)


def test_off_grid_is_l():
    assert expected_cost(h_const(-60), SHAPE, (0, 0), Control.N, P) == 100.0
    assert np.all(cost_field(h_const(-60), SHAPE, P)[0, [Control.N, Control.NE, Control.NW, Control.W, Control.SW]] == 100.0)


def test_invariant_rejected():
    with pytest.raises(ValueError):
        CostEncoderParams(5.0, 2.0)


@given(st.integers(0, 10_000))
def test_field_matches_pointwise(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(0, 3, SHAPE[0] * SHAPE[1])
    p = CostEncoderParams(rng.uniform(0.1, 2), rng.uniform(5, 50))
    c = cost_field(h, SHAPE, p)
    x = (int(rng.integers(6)), int(rng.integers(5)))
    for u in Control:
        assert c[x[1] * 6 + x[0], u] == pytest.approx(expected_cost(h, SHAPE, x, u, p))
    assert np.all((c >= p.s - 1e-12) & (c <= p.l + 1e-12))


@given(st.integers(0, 10_000), st.floats(0.0, 5.0))
def test_monotone_in_occupancy(seed, bump):
    rng = np.random.default_rng(seed)
    h = rng.normal(0, 2, SHAPE[0] * SHAPE[1])
    x, u = (2, 2), Control(int(rng.integers(8)))
    base = expected_cost(h, SHAPE, x, u, P)
    h2 = h.copy()
    h2[2 * 6 + 2] += bump
    assert expected_cost(h2, SHAPE, x, u, P) >= base - 1e-12


def test_partials_sum_to_one():
    rng = np.random.default_rng(1)
    h = rng.normal(0, 2, 30)
    ds, dl, _, _ = cost_grads(h, SHAPE, (3, 3), Control.SW, P)
    assert ds + dl == pytest.approx(1.0)


def test_saturation():
    _, _, di, dj = cost_grads(h_const(40), SHAPE, (3, 3), Control.N, P)
    assert abs(di) < 1e-12 and abs(dj) < 1e-12


def test_finite_differences_1000_probes():
    rng = np.random.default_rng(7)
    eps = 1e-5
    worst = 0.0
    for _ in range(1000):
        h = rng.normal(0, 2, 30)
        p = CostEncoderParams(rng.uniform(0.5, 3), rng.uniform(10, 100))
        x = (int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        u = Control(int(rng.integers(8)))
        i = x[1] * 6 + x[0]
        j = int(successor_table(*SHAPE)[i, u])
        an = np.array(cost_grads(h, SHAPE, x, u, p))
        fd = []
        fd.append((expected_cost(h, SHAPE, x, u, CostEncoderParams(p.s + eps, p.l))
                   - expected_cost(h, SHAPE, x, u, CostEncoderParams(p.s - eps, p.l))) / (2 * eps))
        fd.append((expected_cost(h, SHAPE, x, u, CostEncoderParams(p.s, p.l + eps))
                   - expected_cost(h, SHAPE, x, u, CostEncoderParams(p.s, p.l - eps))) / (2 * eps))
        for k in (i, j):
            hp, hm = h.copy(), h.copy()
            hp[k] += eps
            hm[k] -= eps
            fd.append((expected_cost(hp, SHAPE, x, u, p) - expected_cost(hm, SHAPE, x, u, p)) / (2 * eps))
        fd = np.array(fd)
        rel = np.abs(an - fd) / np.maximum(np.abs(fd), 1e-3)
        worst = max(worst, rel.max())
    assert worst < 1e-6


def test_csv(tmp_path):
    c = cost_field(h_const(0), SHAPE, P)
    with open(tmp_path / "c.csv", "w") as fh:
        write_cost_csv(c, 6, fh)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "x,y,control,cost" and len(lines) == 1 + 30 * 8
