import math
import time

import numpy as np
import pytest
from scipy.optimize import minimize

from riskmpcc.dynamics import VehicleLimits, VehicleState
from riskmpcc.errors import InvalidInputError
from riskmpcc.geometry import point_segment_distance
from riskmpcc.mpcc import (CONVERGED, MAX_ITERS, RECOVERED, MPCCPlanner, PlannerConfig, PlannerSolution,
                           PlannerWeights, box_qp, contouring_and_lag_errors, rollout, sensitivities, stage_cost,
                           step_jacobians)
from riskmpcc.reference_path import from_polyline
from riskmpcc.risk_field import empty_field, static_field

LIM = VehicleLimits()
STRAIGHT = from_polyline([(0, 0), (200, 0)])
CURVE = from_polyline([(0, 0), (20, 0), (40, 8), (55, 25), (60, 50)])


def plan_clearance(sol, kx, ky):
    xy = sol.states[:, :2]
    d, _ = point_segment_distance(kx, ky, xy[:-1, 0], xy[:-1, 1], xy[1:, 0], xy[1:, 1])
    return float(d.min())


# -- errors and stage cost -----------------------------------------------------------

def test_errors_vanish_on_the_reference_point():
    for theta in np.linspace(0, CURVE.total_length, 37):
        x, y, _ = CURVE.sample(theta)
        ec, el = contouring_and_lag_errors(CURVE, x, y, theta)
        assert abs(ec) < 1e-9 and abs(el) < 1e-9


def test_pure_contouring_and_pure_lag():
    assert contouring_and_lag_errors(STRAIGHT, 5.0, 0.5, 5.0) == (0.5, 0.0)
    assert contouring_and_lag_errors(STRAIGHT, 4.0, 0.0, 5.0) == (0.0, 1.0)


def test_errors_are_a_rotation_of_the_offset():
    rng = np.random.default_rng(0)
    theta = rng.uniform(0, CURVE.total_length, 50)
    X, Y = rng.uniform(-5, 60, 50), rng.uniform(-5, 50, 50)
    ec, el = contouring_and_lag_errors(CURVE, X, Y, theta)
    xr, yr, _ = CURVE.sample_many(theta)
    assert np.allclose(ec ** 2 + el ** 2, (xr - X) ** 2 + (yr - Y) ** 2)


def test_stage_cost_examples():
    w0 = PlannerWeights(q_c=0, q_l=1, q_u=(0, 0), q_r=0, q_v=0)
    assert stage_cost(w0, (0.0, 0.0), (0.0, 0.0, 0.0), 0.0, 0) == 0.0
    w1 = PlannerWeights(q_c=0, q_l=1, q_u=(0, 0), q_r=0, q_v=1)
    assert stage_cost(w1, (0.0, 0.0), (0.0, 0.0, 3.0), 0.0, 0) == -3.0
    w2 = PlannerWeights(q_c=0, q_l=1, q_u=(0, 0), q_r=10, q_v=0, gamma=0.9)
    assert stage_cost(w2, (0.0, 0.0), (0.0, 0.0, 0.0), 0.5, 2) == pytest.approx(4.05, abs=1e-12)


def test_stage_cost_full_expression():
    w = PlannerWeights(q_c=2, q_l=3, q_u=(4, 5), q_r=6, q_v=7, gamma=0.5)
    got = stage_cost(w, (0.1, -0.2), (0.3, -0.4, 1.5), 0.25, 3)
    want = 2 * 0.01 + 3 * 0.04 + 4 * 0.09 + 5 * 0.16 + 6 * 0.125 * 0.25 - 7 * 1.5
    assert got == pytest.approx(want, abs=1e-12)


def test_planner_costs_match_stage_cost():
    pl = MPCCPlanner(PlannerWeights(q_r=30))
    field = static_field([(8.0, 0.5, 0.0, 1.0)])
    W = np.tile([0.05, 0.5, 6.0], (80, 1))
    Z, W = rollout(np.array([0, 0.2, 0, 0, 5.0, 0]), W, LIM, 0.05, STRAIGHT.total_length, 15.0)
    c = pl.costs(Z, W, STRAIGHT, field)
    for k in (0, 17, 80):
        err = contouring_and_lag_errors(STRAIGHT, Z[k, 0], Z[k, 1], Z[k, 5])
        u = None if k == 80 else tuple(W[k])
        assert c[k] == pytest.approx(stage_cost(pl.weights, err, u, field.evaluate(k, Z[k, 0], Z[k, 1]), k), abs=1e-9)


def test_weights_validation():
    with pytest.raises(InvalidInputError):
        PlannerWeights(q_l=0.0)
    with pytest.raises(InvalidInputError):
        PlannerWeights(q_c=-1.0)


# -- model derivatives ---------------------------------------------------------------

def test_step_jacobians_match_finite_differences():
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(30):
        z = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3), rng.uniform(-0.3, 0.3),
                      rng.uniform(2, 12), rng.uniform(5, 50)])
        w = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-3, 2), rng.uniform(0, 10)])
        step = lambda z_, w_: rollout(z_, w_[None, :], LIM, 0.05, 200.0, 15.0)[0][1]
        A, B = step_jacobians(np.vstack((z, step(z, w))), w[None, :], LIM.wheelbase_L, 0.05)
        fdA = np.column_stack([(step(z + h * e, w) - step(z - h * e, w)) / (2 * h) for e in np.eye(6)])
        fdB = np.column_stack([(step(z, w + h * e) - step(z, w - h * e)) / (2 * h) for e in np.eye(3)])
        assert np.allclose(A[0], fdA, atol=1e-7)
        assert np.allclose(B[0], fdB, atol=1e-7)


def test_sensitivities_match_finite_differences():
    rng = np.random.default_rng(2)
    n, h = 12, 1e-6
    z0 = np.array([0.0, 0.0, 0.1, 0.05, 6.0, 3.0])
    W = np.column_stack((rng.uniform(-0.2, 0.2, n), rng.uniform(-1, 1, n), rng.uniform(3, 8, n)))
    Z, _ = rollout(z0, W, LIM, 0.05, 200.0, 15.0)
    A, B = step_jacobians(Z, W, LIM.wheelbase_L, 0.05)
    S = sensitivities(A, B)
    for j in range(3 * n):
        dw = np.zeros(3 * n)
        dw[j] = h
        Zp, _ = rollout(z0, W + dw.reshape(n, 3), LIM, 0.05, 200.0, 15.0)
        Zm, _ = rollout(z0, W - dw.reshape(n, 3), LIM, 0.05, 200.0, 15.0)
        assert np.allclose(S[:, :, j], (Zp - Zm) / (2 * h), atol=1e-6)


def test_cost_gradient_on_straight_path():
    # on a straight path the reference heading is constant, so the model gradient is exact
    pl = MPCCPlanner(PlannerWeights(q_r=40), config=PlannerConfig(horizon=15))
    field = static_field([(6.0, 0.8, 0.2, 1.0)], horizon_steps=16)
    z0 = np.array([0.0, 0.3, 0.05, 0.02, 5.0, 0.5])
    rng = np.random.default_rng(3)
    W = np.column_stack((rng.uniform(-0.2, 0.2, 15), rng.uniform(-1, 1, 15), rng.uniform(3, 7, 15)))
    J = lambda W_: pl.costs(*rollout(z0, W_, LIM, 0.05, 200.0, 15.0), STRAIGHT, field).sum()
    g, H = pl._model(*rollout(z0, W, LIM, 0.05, 200.0, 15.0), STRAIGHT, field)
    h = 1e-6
    fd = np.array([(J(W + h * e.reshape(15, 3)) - J(W - h * e.reshape(15, 3))) / (2 * h) for e in np.eye(45)])
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6
    assert np.all(np.linalg.eigvalsh(H) > 0)


# -- box QP -------------------------------------------------------------------------

def test_box_qp_against_bounded_minimizer():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = 9
        M = rng.normal(size=(n, n))
        H = M @ M.T + 0.5 * np.eye(n)
        g = rng.normal(size=n) * 3
        lo, hi = -rng.uniform(0.1, 1, n), rng.uniform(0.1, 1, n)
        d = box_qp(H, g, lo, hi, iters=50)
        assert np.all(d >= lo - 1e-12) and np.all(d <= hi + 1e-12)
        ref = minimize(lambda x: 0.5 * x @ H @ x + g @ x, np.zeros(n), jac=lambda x: H @ x + g,
                       bounds=list(zip(lo, hi)), method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12})
        q = lambda x: 0.5 * x @ H @ x + g @ x
        assert q(d) <= q(ref.x) + 1e-8
        # the default two-pass variant still gives a feasible descent direction
        d2 = box_qp(H, g, lo, hi)
        assert g @ d2 < 0 and np.all(d2 >= lo - 1e-12) and np.all(d2 <= hi + 1e-12)


# -- solve ---------------------------------------------------------------------------

def test_straight_empty_field_tracks_and_descends():
    pl = MPCCPlanner(config=PlannerConfig(max_iters=30))
    sol = pl.solve(VehicleState(v=5.0), STRAIGHT, empty_field())
    ec, el = contouring_and_lag_errors(STRAIGHT, sol.states[:, 0], sol.states[:, 1], sol.states[:, 5])
    assert np.abs(ec).max() < 1e-3
    assert np.all(np.diff(sol.objective_history) < 0)
    assert sol.inputs[:, 2].max() > 5.0 + 1.0   # progress speed pushed upward
    assert np.all(sol.inputs[:, 2] <= pl.vt_max)


def test_curved_path_stays_close():
    pl = MPCCPlanner(config=PlannerConfig(max_iters=10))
    x, y, phi = CURVE.sample(0.0)
    sol = pl.solve(VehicleState(x, y, phi, 0.0, 6.0), CURVE, empty_field())
    ec, _ = contouring_and_lag_errors(CURVE, sol.states[:, 0], sol.states[:, 1], sol.states[:, 5])
    assert np.abs(ec).max() < 0.5
    assert np.all(np.diff(sol.objective_history) < 0)


def test_no_progress_reward_stays_at_rest():
    pl = MPCCPlanner(PlannerWeights(q_v=0.0), config=PlannerConfig(max_iters=10))
    sol = pl.solve(VehicleState(v=0.0), STRAIGHT, empty_field())
    assert sol.states[-1, 4] < 0.1


def test_solution_is_shooting_consistent_and_in_bounds():
    rng = np.random.default_rng(5)
    pl = MPCCPlanner(PlannerWeights(q_r=80), config=PlannerConfig(max_iters=6))
    for _ in range(5):
        field = static_field([(rng.uniform(5, 25), rng.uniform(-2, 2), rng.uniform(-1, 1), 1.0)])
        init = VehicleState(0.0, rng.uniform(-1, 1), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0, 12))
        sol = pl.solve(init, STRAIGHT, field)
        Z, W = rollout(sol.states[0], sol.inputs, LIM, 0.05, STRAIGHT.total_length, pl.vt_max)
        assert np.allclose(Z, sol.states, atol=1e-6) and np.array_equal(W, sol.inputs)
        assert np.all(np.abs(sol.inputs[:, 0]) <= LIM.delta_rate_max + 1e-8)
        assert np.all((sol.inputs[:, 1] >= LIM.a_min - 1e-8) & (sol.inputs[:, 1] <= LIM.a_max + 1e-8))
        assert np.all((sol.inputs[:, 2] >= -1e-8) & (sol.inputs[:, 2] <= pl.vt_max + 1e-8))
        assert np.all(np.abs(sol.states[:, 3]) <= LIM.delta_max + 1e-8)
        assert np.all((sol.states[:, 4] >= LIM.v_min - 1e-8) & (sol.states[:, 4] <= LIM.v_max + 1e-8))
        assert np.all((sol.states[:, 5] >= 0) & (sol.states[:, 5] <= STRAIGHT.total_length + 1e-8))
        assert sol.solver_status in (CONVERGED, MAX_ITERS)


def test_zero_risk_weight_ignores_the_field():
    pl = MPCCPlanner(PlannerWeights(q_r=0.0), config=PlannerConfig(max_iters=4))
    a = pl.solve(VehicleState(v=4.0), STRAIGHT, empty_field())
    b = pl.solve(VehicleState(v=4.0), STRAIGHT, static_field([(10.0, 0.2, 0.0, 1.0), (30.0, -1.0, 1.0, 0.5)]))
    assert np.array_equal(a.stage_costs, b.stage_costs)
    assert np.array_equal(a.states, b.states)


def test_kernel_beside_the_path_pushes_the_plan_away():
    kx, ky = 12.0, 0.3
    field = static_field([(kx, ky, 0.0, 1.0)])
    free = MPCCPlanner(PlannerWeights(q_r=0), config=PlannerConfig(max_iters=30)).solve(VehicleState(v=5.0), STRAIGHT, field)
    risky = MPCCPlanner(PlannerWeights(q_r=60), config=PlannerConfig(max_iters=30)).solve(VehicleState(v=5.0), STRAIGHT, field)
    assert plan_clearance(risky, kx, ky) > plan_clearance(free, kx, ky) + 0.1


def test_short_field_rejected_and_nan_field_recovers():
    pl = MPCCPlanner()
    with pytest.raises(InvalidInputError):
        pl.solve(VehicleState(v=1.0), STRAIGHT, empty_field(horizon_steps=10))
    bad = static_field([(5.0, 0.0, 0.0, math.nan)])
    sol = pl.solve(VehicleState(v=3.0), STRAIGHT, bad)
    assert sol.solver_status == RECOVERED
    assert np.all(np.isfinite(sol.states))


def test_warm_started_cycle_meets_time_budget():
    pl = MPCCPlanner()
    sol = pl.solve(VehicleState(v=5.0), STRAIGHT, empty_field())
    times = []
    for _ in range(15):
        sol = pl.warm_start_shift(sol, STRAIGHT)
        start = time.perf_counter()
        sol = pl.solve(sol.state(0).vehicle, STRAIGHT, empty_field(), sol)
        times.append(time.perf_counter() - start)
    assert float(np.median(times)) < 0.05


# -- warm start shift ---------------------------------------------------------------

def _constant_solution(u=(0.0, 0.0, 5.0), n=80):
    z0 = np.array([0.0, 0.0, 0.0, 0.0, 5.0, 0.0])
    Z, W = rollout(z0, np.tile(u, (n, 1)), LIM, 0.05, 200.0, 15.0)
    return PlannerSolution(Z, W, np.zeros(n + 1))


def test_shift_of_constant_input_solution():
    sol = _constant_solution()
    pl = MPCCPlanner()
    shifted = pl.warm_start_shift(sol, STRAIGHT)
    assert np.array_equal(shifted.inputs, sol.inputs)
    assert np.allclose(shifted.states[:-1], sol.states[1:], atol=1e-12)
    assert shifted.states[-1, 5] > sol.states[-1, 5]


def test_double_shift_composes():
    rng = np.random.default_rng(6)
    n = 80
    W = np.column_stack((rng.uniform(-0.1, 0.1, n), rng.uniform(-1, 1, n), rng.uniform(2, 8, n)))
    Z, W = rollout(np.array([0, 0, 0, 0, 5.0, 0]), W, LIM, 0.05, 200.0, 15.0)
    sol = PlannerSolution(Z, W, np.arange(n + 1, dtype=float))
    pl = MPCCPlanner()
    twice = pl.warm_start_shift(pl.warm_start_shift(sol, STRAIGHT), STRAIGHT)
    want_inputs = np.vstack((W[2:], W[-1:], W[-1:]))
    want_states, _ = rollout(Z[2], want_inputs, LIM, 0.05, STRAIGHT.total_length, pl.vt_max)
    assert np.array_equal(twice.inputs, want_inputs)
    assert np.allclose(twice.states, want_states, atol=1e-6)
    assert np.allclose(twice.states[:-2], Z[2:], atol=1e-6)
    assert twice.stage_costs[0] == 2.0 and twice.stage_costs[-1] == n
