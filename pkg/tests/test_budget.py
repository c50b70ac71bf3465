from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from overlayroute.budget import (BudgetTuner, ReplicatorODEError, integrate_replicator_ode, lyapunov_value,
                                 monotonicity_probe, project_simplex, replicator_recursion, replicator_step)
from overlayroute.schedules import Step


def test_projection_by_hand():
    assert project_simplex([1.5, -0.5]) == pytest.approx([1.0, 0.0])
    assert project_simplex([0.0, 0.0], 2.0) == pytest.approx([1.0, 1.0])


def test_projection_keeps_feasible_point():
    x = np.array([0.2, 0.3, 0.5])
    assert np.array_equal(project_simplex(x), x)


def test_projection_matches_grid_search():
    rng = np.random.default_rng(0)
    grid = np.array([p for p in itertools.product(np.linspace(0, 1, 101), repeat=2) if p[0] + p[1] <= 1 + 1e-12])
    pts = np.column_stack([grid, 1 - grid.sum(axis=1)])
    for _ in range(20):
        x = rng.normal(0.3, 1.0, 3)
        best = pts[np.argmin(((pts - x) ** 2).sum(axis=1))]
        assert np.abs(project_simplex(x) - best).max() <= 0.011


@settings(max_examples=300)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10), st.floats(0.01, 100))
def test_projection_lands_on_simplex(x, total):
    y = project_simplex(x, total)
    assert y.min() >= 0
    assert y.sum() == pytest.approx(total, rel=1e-9, abs=1e-9)


def test_replicator_step_by_hand():
    out = replicator_step([0.6, 0.4], [2.0, 1.0], 0.1, 1.0, floor=0.0)
    assert out == pytest.approx([0.624, 0.376])
    # same fractions on a scaled simplex
    assert replicator_step([3.0, 2.0], [2.0, 1.0], 0.1, 5.0, floor=0.0) == pytest.approx([3.12, 1.88])


def test_equal_prices_leave_budgets():
    B = [0.5, 1.5, 2.0]
    assert replicator_step(B, [3.0, 3.0, 3.0], 0.7, 4.0) == pytest.approx(B)


def test_zero_entry_stays_zero_without_floor():
    out = replicator_step([0.0, 0.3, 0.7], [9.0, 1.0, 0.0], 0.2, 1.0, floor=0.0)
    assert out[0] == 0.0


@settings(max_examples=300)
@given(st.integers(2, 8).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0.01, 1), min_size=n, max_size=n),
    st.lists(st.floats(0, 100), min_size=n, max_size=n))),
    st.floats(0, 5), st.floats(0.1, 20))
def test_replicator_step_stays_on_floored_simplex(bl, gamma, total):
    raw, lam = bl
    B = total * np.asarray(raw) / sum(raw)
    floor = 1e-6
    out = replicator_step(B, lam, gamma, total, floor)
    assert out.sum() == pytest.approx(total, rel=1e-9)
    assert out.min() >= floor * total * (1 - 1e-9)


def test_tuner_follows_function():
    tuner = BudgetTuner(3, 6.0, Step(0.5, 1.0), floor=0.0)
    b = tuner.step([1.0, 2.0, 3.0], 0)
    assert b == pytest.approx(replicator_step([2, 2, 2], [1, 2, 3], 0.5, 6.0, 0.0))
    with pytest.raises(ValueError):
        BudgetTuner(2, 1.0, initial=[0.7, 0.7])


def test_lyapunov_by_hand():
    assert lyapunov_value([0.5, 0.5], [0.6, 0.4]) == pytest.approx(0.6 * np.log(1.2) + 0.4 * np.log(0.8))
    assert lyapunov_value([0.6, 0.4], [0.6, 0.4]) == 0.0
    assert lyapunov_value([1.0, 0.0], [0.6, 0.4]) == float("inf")


def linear_prices(c, D):
    c, D = np.asarray(c), np.asarray(D)
    return lambda B: c - D @ B


def test_ode_reaches_boundary_rest_point():
    # lambda = c - B with c = (2, 1, 1.5): the equal-price point has a negative
    # middle entry, so the middle budget dies out and the other two equalise
    # 2 - B_1 = 1.5 - B_3 on B_1 + B_3 = 1
    lam = linear_prices([2.0, 1.0, 1.5], np.eye(3))
    traj = integrate_replicator_ode(lam, [1 / 3] * 3, horizon=60.0, dt=1e-2)
    assert traj.states[-1] == pytest.approx([0.75, 0.0, 0.25], abs=1e-3)
    assert traj.states[-1].sum() == pytest.approx(1.0, abs=1e-9)


def test_ode_interior_fixed_point():
    lam = linear_prices([2.0, 1.8, 1.6], 4 * np.eye(3))
    traj = integrate_replicator_ode(lam, [0.2, 0.3, 0.5], horizon=30.0, dt=1e-2)
    p = lam(traj.states[-1])
    assert np.ptp(p) < 1e-6
    assert traj.at(0.0)[0] == pytest.approx([0.2, 0.3, 0.5])


def test_ode_rejects_boundary_start_and_large_steps():
    with pytest.raises(ValueError):
        integrate_replicator_ode(lambda B: B, [0.0, 1.0], 1.0)
    with pytest.raises(ReplicatorODEError):
        integrate_replicator_ode(lambda B: 1e6 * np.array([1.0, -1.0]), [0.5, 0.5], 1.0, dt=0.5)


def test_recursion_tracks_ode_endpoint():
    lam = linear_prices([2.0, 1.8, 1.6], 4 * np.eye(3))
    it = replicator_recursion(lam, [0.2, 0.3, 0.5], 20_000, Step(1.0, 1.0))
    assert np.ptp(lam(it[-1])) < 1e-3


def test_probe_separates_monotone_from_increasing():
    rng = np.random.default_rng(1)
    good = monotonicity_probe(linear_prices([1, 1, 1], 2 * np.eye(3)), 500, rng, 3)
    assert good.fraction == 1.0 and good.worst < 0
    bad = monotonicity_probe(lambda B: B, 500, rng, 3)
    assert bad.fraction == 0.0
    assert bad.as_dict()["samples"] == 500


def brute_projection(x, total):
    """Exact projection by trying every support set (KKT: y_S = x_S - theta)."""
    best, best_d = None, np.inf
    n = len(x)
    for mask in range(1, 2 ** n):
        S = [i for i in range(n) if mask >> i & 1]
        theta = (x[S].sum() - total) / len(S)
        y = np.zeros(n)
        y[S] = x[S] - theta
        if y.min() < 0:
            continue
        d = float(((y - x) ** 2).sum())
        if d < best_d:
            best, best_d = y, d
    return best


def test_projection_matches_support_enumeration():
    rng = np.random.default_rng(8)
    for _ in range(30):
        x = rng.uniform(-5, 5, 8)
        total = float(rng.uniform(0.5, 10))
        assert np.abs(project_simplex(x, total) - brute_projection(x, total)).max() <= 1e-6


def test_simplex_faces_are_invariant():
    B = [0.0, 3.0, 0.0]
    assert replicator_step(B, [5.0, 1.0, 2.0], 0.3, 3.0, floor=0.0) == pytest.approx(B)
    B = [0.0, 1.0, 2.0]
    out = replicator_step(B, [5.0, 1.0, 2.0], 0.3, 3.0, floor=0.0)
    assert out[0] == 0.0


def test_constant_prices_give_stationary_trajectory():
    traj = integrate_replicator_ode(lambda B: np.full(3, 2.0), [0.2, 0.5, 0.3], horizon=5.0, dt=0.01)
    assert np.abs(traj.states - traj.states[0]).max() < 1e-12


def test_ode_fixed_point_by_root_finding():
    from scipy.optimize import brentq
    c, d = np.array([2.0, 1.8, 1.6]), 4.0
    lam = linear_prices(c, d * np.eye(3))
    # common price m solves sum_l (c_l - m) / d = 1
    m = brentq(lambda m: ((c - m) / d).sum() - 1.0, -10, 10)
    star = (c - m) / d
    ends = [integrate_replicator_ode(lam, B0, horizon=40.0, dt=1e-2).states[-1]
            for B0 in ([0.1, 0.1, 0.8], [0.7, 0.2, 0.1])]
    for e in ends:
        assert np.abs(e - star).max() < 1e-6
    assert np.abs(ends[0] - ends[1]).max() < 1e-6


def test_probe_on_constant_map_is_never_strict():
    rep = monotonicity_probe(lambda B: np.array([1.0, 2.0, 3.0]), 200, np.random.default_rng(2), 3)
    assert rep.fraction == 0.0
