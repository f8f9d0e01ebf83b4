"""Risk-aware model predictive contouring control.

Each stage has two vehicle inputs (steering rate and acceleration) plus the
progress speed ``v_theta``. The augmented state is
``[x, y, phi, delta, v, theta]``. The problem is solved by a few
Gauss-Newton SQP iterations over single-shooting sensitivities, with a box
QP for the input bounds and a backtracking line search on the true cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dynamics import VehicleLimits, VehicleState
from .errors import InvalidInputError
from .reference_path import ReferencePath
from .risk_field import RiskField

NX = 6
NU = 3

CONVERGED = "converged"
MAX_ITERS = "max-iters"
RECOVERED = "infeasible-start-recovered"


@dataclass(frozen=True)
class PlannerWeights:
    q_c: float = 5.0
    q_l: float = 50.0
    q_u: tuple[float, float] = (1.0, 0.5)
    q_r: float = 60.0
    q_v: float = 1.0
    gamma: float = 0.95

    def __post_init__(self):
        vals = (self.q_c, self.q_l, *self.q_u, self.q_r, self.q_v)
        if any(v < 0 for v in vals) or not self.q_l > 0:
            raise InvalidInputError("weights must be >= 0 and q_l > 0")
        if not 0 < self.gamma <= 1:
            raise InvalidInputError("gamma must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerWeights":
        d = dict(d)
        if "q_u" in d:
            d["q_u"] = tuple(d["q_u"])
        return cls(**d)


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 80
    dt: float = 0.05
    max_iters: int = 5
    v_theta_max: float | None = None
    damping: float = 1e-6
    armijo: float = 1e-4
    max_backtracks: int = 8
    # stop when the predicted decrease falls below this
    tol: float = 1e-7
    qp_iters: int = 2
    hint_window: float = 20.0

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        return cls(**d)


@dataclass(frozen=True)
class AugmentedState:
    vehicle: VehicleState
    theta_mu: float


@dataclass(frozen=True)
class AugmentedInput:
    delta_rate: float
    accel: float
    v_theta: float


@dataclass(eq=False)
class PlannerSolution:
    """Planned horizon: states (N+1, 6), inputs (N, 3), per-stage costs (N+1)."""

    states: np.ndarray
    inputs: np.ndarray
    stage_costs: np.ndarray
    solver_status: str = CONVERGED
    objective_history: list = field(default_factory=list)
    iterations: int = 0

    @property
    def horizon(self) -> int:
        return len(self.inputs)

    @property
    def objective(self) -> float:
        return float(self.stage_costs.sum())

    def state(self, k: int) -> AugmentedState:
        z = self.states[k]
        return AugmentedState(VehicleState.from_array(z[:5]), float(z[5]))

    def input(self, k: int) -> AugmentedInput:
        return AugmentedInput(*(float(v) for v in self.inputs[k]))

    def summary(self) -> dict:
        return {
            "status": self.solver_status,
            "iterations": self.iterations,
            "objective": self.objective,
            "first_input": self.inputs[0].tolist(),
            "theta_end": float(self.states[-1, 5]),
        }


def contouring_and_lag_errors(path: ReferencePath, X, Y, theta_mu):
    """Approximate contouring and lag errors at progress ``theta_mu``.

    Works on scalars or equal-length arrays.
    """
    scalar = np.ndim(X) == 0
    xr, yr, phi = path.sample_many(np.atleast_1d(theta_mu))
    s, c = np.sin(phi), np.cos(phi)
    dx = xr - np.atleast_1d(X)
    dy = yr - np.atleast_1d(Y)
    ec = s * dx - c * dy
    el = c * dx + s * dy
    if scalar:
        return float(ec[0]), float(el[0])
    return ec, el


def stage_cost(weights: PlannerWeights, errors, u, risk_value: float, k: int) -> float:
    """Stage cost; ``u`` is (delta_rate, accel, v_theta) or None for the terminal stage."""
    ec, el = errors
    cost = weights.q_c * ec * ec + weights.q_l * el * el + weights.q_r * weights.gamma ** k * risk_value
    if u is not None:
        dd, a, vt = u
        cost += weights.q_u[0] * dd * dd + weights.q_u[1] * a * a - weights.q_v * vt
    return float(cost)


def _input_bounds(limits: VehicleLimits, vt_max: float):
    lo = np.array([-limits.delta_rate_max, limits.a_min, 0.0])
    hi = np.array([limits.delta_rate_max, limits.a_max, vt_max])
    return lo, hi


def rollout(z0: np.ndarray, inputs: np.ndarray, limits: VehicleLimits, dt: float, path_length: float,
            vt_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Propagate the planner model, clipping inputs so every state bound holds.

    Returns (states, clipped inputs). Steering and speed are pure integrators,
    as is progress, so clipping their rates keeps them inside their boxes exactly.
    """
    n = len(inputs)
    Z = np.empty((n + 1, NX))
    W = np.empty((n, NU))
    x, y, phi, delta, v, th = (float(c) for c in z0)
    Z[0] = (x, y, phi, delta, v, th)
    L = limits.wheelbase_L
    dmax, ddmax = limits.delta_max, limits.delta_rate_max
    h = 0.5 * dt
    cos, sin, tan = math.cos, math.sin, math.tan
    for k, (dd, a, vt) in enumerate(inputs.tolist()):
        dd = min(max(dd, -ddmax, (-dmax - delta) / dt), ddmax, (dmax - delta) / dt)
        a = min(max(a, limits.a_min, (limits.v_min - v) / dt), limits.a_max, (limits.v_max - v) / dt)
        vt = min(max(vt, 0.0), vt_max, max((path_length - th) / dt, 0.0))
        phim = phi + h * v * tan(delta) / L
        deltam = delta + h * dd
        vm = v + h * a
        x += dt * vm * cos(phim)
        y += dt * vm * sin(phim)
        phi += dt * vm * tan(deltam) / L
        delta = min(max(delta + dt * dd, -dmax), dmax)
        v = min(max(v + dt * a, limits.v_min), limits.v_max)
        th = min(th + dt * vt, path_length)
        Z[k + 1] = (x, y, phi, delta, v, th)
        W[k] = (dd, a, vt)
    return Z, W


def step_jacobians(Z: np.ndarray, W: np.ndarray, L: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact Jacobians (A_k, B_k) of the midpoint step at every stage."""
    n = len(W)
    phi, delta, v = Z[:n, 2], Z[:n, 3], Z[:n, 4]
    dd, a = W[:, 0], W[:, 1]
    h = 0.5 * dt
    td = np.tan(delta)
    phim = phi + h * v * td / L
    deltam = delta + h * dd
    vm = v + h * a
    cm, sm = np.cos(phim), np.sin(phim)
    tdm = np.tan(deltam)
    sec2 = 1.0 + td * td
    sec2m = 1.0 + tdm * tdm
    # d(phim)/d(delta), d(phim)/d(v)
    pm_d = h * v * sec2 / L
    pm_v = h * td / L

    A = np.zeros((n, NX, NX))
    idx = np.arange(NX)
    A[:, idx, idx] = 1.0
    A[:, 0, 2] = -dt * vm * sm
    A[:, 0, 3] = -dt * vm * sm * pm_d
    A[:, 0, 4] = dt * (cm - vm * sm * pm_v)
    A[:, 1, 2] = dt * vm * cm
    A[:, 1, 3] = dt * vm * cm * pm_d
    A[:, 1, 4] = dt * (sm + vm * cm * pm_v)
    A[:, 2, 3] = dt * vm * sec2m / L
    A[:, 2, 4] = 1.0 * dt * tdm / L
    B = np.zeros((n, NX, NU))
    B[:, 0, 1] = dt * cm * h
    B[:, 1, 1] = dt * sm * h
    B[:, 2, 0] = dt * vm * sec2m * h / L
    B[:, 2, 1] = dt * tdm * h / L
    B[:, 3, 0] = dt
    B[:, 4, 1] = dt
    B[:, 5, 2] = dt
    return A, B


def sensitivities(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """dZ_k/dW for all k as an array (N+1, 6, 3N)."""
    n = len(A)
    S = np.zeros((n + 1, NX, NU * n))
    for k in range(n):
        cols = NU * k
        if k:
            S[k + 1, :, :cols] = A[k] @ S[k, :, :cols]
        S[k + 1, :, cols : cols + NU] = B[k]
    return S


class MPCCPlanner:
    """Stateless solver bound to one vehicle's limits and cost weights."""

    def __init__(self, weights: PlannerWeights | None = None, limits: VehicleLimits | None = None,
                 config: PlannerConfig | None = None):
        self.weights = weights or PlannerWeights()
        self.limits = limits or VehicleLimits()
        self.config = config or PlannerConfig()
        self.vt_max = self.config.v_theta_max if self.config.v_theta_max is not None else self.limits.v_max

    # -- cost ---------------------------------------------------------------
    def costs(self, Z: np.ndarray, W: np.ndarray, path: ReferencePath, field: RiskField) -> np.ndarray:
        w = self.weights
        ec, el = contouring_and_lag_errors(path, Z[:, 0], Z[:, 1], Z[:, 5])
        c = w.q_c * ec * ec + w.q_l * el * el
        if w.q_r != 0.0:
            risk, _, _ = field.evaluate_stages(Z[:, 0], Z[:, 1], np.arange(len(Z)))
            c = c + w.q_r * w.gamma ** np.arange(len(Z)) * risk
        c[:-1] += w.q_u[0] * W[:, 0] ** 2 + w.q_u[1] * W[:, 1] ** 2 - w.q_v * W[:, 2]
        return c

    def _model(self, Z, W, path, field):
        """Cost gradient and Gauss-Newton Hessian with respect to all inputs."""
        w, cfg = self.weights, self.config
        n = len(W)
        A, B = step_jacobians(Z, W, self.limits.wheelbase_L, cfg.dt)
        S = sensitivities(A, B)
        Sx, Sy, St = S[:, 0, :], S[:, 1, :], S[:, 5, :]
        xr, yr, phi = path.sample_many(Z[:, 5])
        sn, cs = np.sin(phi)[:, None], np.cos(phi)[:, None]
        dx, dy = xr - Z[:, 0], yr - Z[:, 1]
        ec = np.sin(phi) * dx - np.cos(phi) * dy
        el = np.cos(phi) * dx + np.sin(phi) * dy
        Jc = -sn * Sx + cs * Sy
        Jl = -cs * Sx - sn * Sy + St

        g = 2.0 * w.q_c * (Jc.T @ ec) + 2.0 * w.q_l * (Jl.T @ el)
        rows = [math.sqrt(2.0 * w.q_c) * Jc, math.sqrt(2.0 * w.q_l) * Jl]
        if w.q_r != 0.0:
            _, grad, hess = field.evaluate_stages(Z[:, 0], Z[:, 1], np.arange(n + 1))
            disc = w.q_r * w.gamma ** np.arange(n + 1)
            g += Sx.T @ (disc * grad[:, 0]) + Sy.T @ (disc * grad[:, 1])
            hxx = np.sqrt(disc * np.maximum(hess[:, 0, 0], 0.0))[:, None]
            hyy = np.sqrt(disc * np.maximum(hess[:, 1, 1], 0.0))[:, None]
            rows += [hxx * Sx, hyy * Sy]
        R = np.vstack(rows)
        H = R.T @ R
        qu = np.tile([2.0 * w.q_u[0], 2.0 * w.q_u[1], 0.0], n)
        H[np.diag_indices_from(H)] += qu + cfg.damping
        g += qu * W.ravel()
        g[2::3] -= w.q_v
        return g, H

    # -- solve --------------------------------------------------------------
    def initial_guess(self, z0: np.ndarray, warm_start: PlannerSolution | None) -> np.ndarray:
        n = self.config.horizon
        if warm_start is not None and warm_start.horizon == n:
            return warm_start.inputs.copy()
        W = np.zeros((n, NU))
        W[:, 2] = min(max(z0[4], 0.0), self.vt_max)
        return W

    def solve(self, initial: VehicleState, path: ReferencePath, field: RiskField,
              warm_start: PlannerSolution | None = None) -> PlannerSolution:
        cfg = self.config
        n = cfg.horizon
        if field.horizon_steps < n + 1:
            raise InvalidInputError(f"risk field has {field.horizon_steps} stages, planner needs {n + 1}")
        hint = None
        if warm_start is not None and warm_start.horizon == n:
            hint = float(warm_start.states[0, 5])
        theta0 = path.project(initial.x, initial.y, hint, cfg.hint_window)
        z0 = np.array([initial.x, initial.y, initial.phi, initial.delta, initial.v, theta0])
        lo, hi = _input_bounds(self.limits, self.vt_max)
        lo_all, hi_all = np.tile(lo, n), np.tile(hi, n)

        Z, W = rollout(z0, self.initial_guess(z0, warm_start), self.limits, cfg.dt, path.total_length, self.vt_max)
        costs = self.costs(Z, W, path, field)
        J = float(costs.sum())
        if not math.isfinite(J):
            return self._recover(z0, warm_start, path, field)
        history = [J]
        status = MAX_ITERS
        it = 0
        for it in range(1, cfg.max_iters + 1):
            g, H = self._model(Z, W, path, field)
            if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
                return self._recover(z0, warm_start, path, field)
            w_flat = W.ravel()
            d = box_qp(H, g, lo_all - w_flat, hi_all - w_flat, cfg.qp_iters)
            slope = float(g @ d)
            if slope > -cfg.tol:
                status = CONVERGED
                it -= 1
                break
            alpha, accepted = 1.0, False
            for _ in range(cfg.max_backtracks + 1):
                W_try = np.clip(w_flat + alpha * d, lo_all, hi_all).reshape(n, NU)
                Z_new, W_new = rollout(z0, W_try, self.limits, cfg.dt, path.total_length, self.vt_max)
                c_new = self.costs(Z_new, W_new, path, field)
                J_new = float(c_new.sum())
                if math.isfinite(J_new) and J_new < J + cfg.armijo * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                status = CONVERGED
                it -= 1
                break
            Z, W, costs, J = Z_new, W_new, c_new, J_new
            history.append(J)
        return PlannerSolution(Z, W, costs, status, history, it)

    def _recover(self, z0, warm_start, path, field) -> PlannerSolution:
        n = self.config.horizon
        if warm_start is not None and warm_start.horizon == n:
            sol = replace(warm_start, solver_status=RECOVERED, objective_history=[])
            return sol
        Z, W = rollout(z0, self.initial_guess(z0, None), self.limits, self.config.dt, path.total_length, self.vt_max)
        return PlannerSolution(Z, W, np.zeros(n + 1), RECOVERED, [], 0)

    def warm_start_shift(self, previous: PlannerSolution, path: ReferencePath) -> PlannerSolution:
        return warm_start_shift(previous, self.limits, self.config.dt, path.total_length, self.vt_max)


def box_qp(H: np.ndarray, g: np.ndarray, lo: np.ndarray, hi: np.ndarray, iters: int = 2) -> np.ndarray:
    """Approximately minimize 0.5 d'Hd + g'd subject to lo <= d <= hi.

    Projected Newton with an active set of bounds whose gradient points
    outward. Falls back to a clipped steepest-descent step when the result is
    not a descent direction.
    """
    try:
        d = cho_solve(cho_factor(H, check_finite=False), -g, check_finite=False)
    except LinAlgError:
        d = -g / np.maximum(np.diag(H), 1e-9)
    if np.all((d >= lo) & (d <= hi)):
        return d
    d = np.clip(d, lo, hi)
    free = None
    for _ in range(iters):
        grad = H @ d + g
        new_free = ~(((d <= lo + 1e-12) & (grad > 0)) | ((d >= hi - 1e-12) & (grad < 0)))
        if free is not None and np.array_equal(new_free, free):
            break
        free = new_free
        if not free.any():
            break
        fixed = ~free
        rhs = -(g[free] + H[np.ix_(free, fixed)] @ d[fixed])
        try:
            df = cho_solve(cho_factor(H[np.ix_(free, free)], check_finite=False), rhs, check_finite=False)
        except LinAlgError:
            break
        d[free] = df
        d = np.clip(d, lo, hi)
    if g @ d >= 0:
        d = np.clip(-g / np.maximum(np.diag(H), 1e-9), lo, hi)
    return d


def warm_start_shift(previous: PlannerSolution, limits: VehicleLimits, dt: float, path_length: float,
                     vt_max: float) -> PlannerSolution:
    """Shift inputs one stage forward (the last is repeated) and re-roll from the old second state."""
    if previous.horizon < 1:
        raise InvalidInputError("empty solution")
    inputs = np.vstack((previous.inputs[1:], previous.inputs[-1:]))
    states, inputs = rollout(previous.states[1], inputs, limits, dt, path_length, vt_max)
    costs = np.concatenate((previous.stage_costs[1:], previous.stage_costs[-1:]))
    return PlannerSolution(states, inputs, costs, previous.solver_status, [], 0)
