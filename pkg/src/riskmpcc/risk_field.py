"""Probability-weighted anisotropic risk field, one kernel set per planner stage.

Each predicted pose contributes ``p * exp(-(dx^2/a^2 + dy^2/b^2))`` where
(dx, dy) is the query offset expressed in the frame of the predicted pose.
The per-stage discount is left to the planner cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import wrap_angle
from .prediction import PredictedTrajectory, PredictionSet


@dataclass(frozen=True)
class RiskFieldParams:
    a: float = 4.0
    b: float = 1.5
    gamma: float = 0.95

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and 0 < self.gamma <= 1):
            raise InvalidInputError("need a > 0, b > 0 and 0 < gamma <= 1")


@dataclass(frozen=True, eq=False)
class RiskField:
    """Kernel arrays of shape (horizon_steps, n_kernels)."""

    cx: np.ndarray
    cy: np.ndarray
    heading: np.ndarray
    weight: np.ndarray
    owner: np.ndarray
    params: RiskFieldParams
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "_cos", np.cos(self.heading))
        object.__setattr__(self, "_sin", np.sin(self.heading))

    @property
    def horizon_steps(self) -> int:
        return self.cx.shape[0]

    @property
    def n_kernels(self) -> int:
        return self.cx.shape[1]

    def kernels(self, k: int) -> list[tuple[float, float, float, float]]:
        return list(zip(self.cx[k].tolist(), self.cy[k].tolist(), self.heading[k].tolist(), self.weight[k].tolist()))

    def _check(self, k, x, y):
        if not 0 <= k < self.horizon_steps:
            raise InvalidInputError(f"stage {k} outside [0, {self.horizon_steps})")
        if not (math.isfinite(x) and math.isfinite(y)):
            raise InvalidInputError("non-finite query")

    def _terms(self, rows, x, y):
        ex = x[:, None] - self.cx[rows]
        ey = y[:, None] - self.cy[rows]
        c, s = self._cos[rows], self._sin[rows]
        dx = c * ex + s * ey
        dy = -s * ex + c * ey
        ia2, ib2 = 1.0 / self.params.a ** 2, 1.0 / self.params.b ** 2
        val = self.weight[rows] * np.exp(-(dx * dx * ia2 + dy * dy * ib2))
        return val, dx, dy, c, s, ia2, ib2

    def evaluate(self, k: int, x: float, y: float) -> float:
        self._check(k, x, y)
        val = self._terms([k], np.array([x]), np.array([y]))[0]
        return float(val.sum())

    def evaluate_gradient(self, k: int, x: float, y: float) -> tuple[float, float]:
        self._check(k, x, y)
        _, g, _ = self.evaluate_stages(np.array([x]), np.array([y]), np.array([k]))
        return float(g[0, 0]), float(g[0, 1])

    def evaluate_stages(self, x: np.ndarray, y: np.ndarray, stages: np.ndarray | None = None):
        """Value with its gradient (S, 2) and Hessian (S, 2, 2), one query point per stage."""
        rows = np.arange(self.horizon_steps) if stages is None else np.asarray(stages)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n = len(rows)
        if self.n_kernels == 0:
            return np.zeros(n), np.zeros((n, 2)), np.zeros((n, 2, 2))
        val, dx, dy, c, s, ia2, ib2 = self._terms(rows, x, y)
        # q = dx^2/a^2 + dy^2/b^2; dq/dx = 2(dx c/a^2 - dy s/b^2), dq/dy = 2(dx s/a^2 + dy c/b^2)
        qx = 2.0 * (dx * c * ia2 - dy * s * ib2)
        qy = 2.0 * (dx * s * ia2 + dy * c * ib2)
        grad = np.column_stack((-(val * qx).sum(1), -(val * qy).sum(1)))
        qxx = 2.0 * (c * c * ia2 + s * s * ib2)
        qyy = 2.0 * (s * s * ia2 + c * c * ib2)
        qxy = 2.0 * (c * s * ia2 - s * c * ib2)
        hess = np.empty((n, 2, 2))
        hess[:, 0, 0] = (val * (qx * qx - qxx)).sum(1)
        hess[:, 1, 1] = (val * (qy * qy - qyy)).sum(1)
        hess[:, 0, 1] = hess[:, 1, 0] = (val * (qx * qy - qxy)).sum(1)
        return val.sum(1), grad, hess


def resample_trajectory(traj: PredictedTrajectory, times: np.ndarray) -> tuple[np.ndarray, bool]:
    """Poses at ``times`` by linear position and on-circle heading interpolation.

    Times past the last predicted pose hold that pose; the flag reports it.
    """
    origin = traj.origin if traj.origin is not None else tuple(traj.poses[0])
    poses = np.vstack((np.asarray(origin, dtype=float)[None, :], traj.poses))
    t_src = traj.dt_pred * np.arange(len(poses))
    held = bool(np.any(times > t_src[-1] + 1e-9))
    tq = np.clip(times, 0.0, t_src[-1])
    idx = np.clip(np.searchsorted(t_src, tq, side="right") - 1, 0, len(poses) - 2)
    u = (tq - t_src[idx]) / (t_src[idx + 1] - t_src[idx])
    p0, p1 = poses[idx], poses[idx + 1]
    xy = p0[:, :2] + u[:, None] * (p1[:, :2] - p0[:, :2])
    phi = wrap_angle(p0[:, 2] + u * wrap_angle(p1[:, 2] - p0[:, 2]))
    return np.column_stack((xy, phi)), held


def build(predictions: list[PredictionSet], params: RiskFieldParams | None = None,
          planner_horizon_steps: int = 81, planner_dt: float = 0.05) -> RiskField:
    """Collect every vehicle's every predicted pose as a kernel per planner stage."""
    params = params or RiskFieldParams()
    times = planner_dt * np.arange(planner_horizon_steps)
    cols_xyh, weights, owners = [], [], []
    flags = []
    for i, pset in enumerate(predictions):
        for traj, p in zip(pset.trajectories, pset.probabilities):
            poses, held = resample_trajectory(traj, times)
            if held and "horizon-held" not in flags:
                flags.append("horizon-held")
            cols_xyh.append(poses)
            weights.append(p)
            owners.append(i)
    s = planner_horizon_steps
    if not cols_xyh:
        empty = np.zeros((s, 0))
        return RiskField(empty, empty, empty, empty, np.zeros(0, dtype=int), params, tuple(flags))
    stack = np.stack(cols_xyh, axis=1)  # (S, K, 3)
    w = np.broadcast_to(np.asarray(weights, dtype=float), (s, len(weights))).copy()
    return RiskField(stack[:, :, 0].copy(), stack[:, :, 1].copy(), stack[:, :, 2].copy(), w,
                     np.asarray(owners), params, tuple(flags))


def static_field(kernels: list[tuple[float, float, float, float]], params: RiskFieldParams | None = None,
                 horizon_steps: int = 81) -> RiskField:
    """Field whose kernels (x, y, heading, weight) stay put at every stage."""
    params = params or RiskFieldParams()
    arr = np.asarray(kernels, dtype=float).reshape(-1, 4)
    rep = lambda col: np.tile(arr[:, col], (horizon_steps, 1))
    return RiskField(rep(0), rep(1), rep(2), rep(3), np.arange(len(arr)), params)


def empty_field(params: RiskFieldParams | None = None, horizon_steps: int = 81) -> RiskField:
    return static_field([], params, horizon_steps)


def rasterize(field: RiskField, k: int, xlim, ylim, resolution: float = 1.0) -> np.ndarray:
    """Rows of (x, y, value) over a regular grid at stage ``k``."""
    xs = np.arange(xlim[0], xlim[1] + 1e-9, resolution)
    ys = np.arange(ylim[0], ylim[1] + 1e-9, resolution)
    gx, gy = np.meshgrid(xs, ys)
    gx, gy = gx.ravel(), gy.ravel()
    if field.n_kernels == 0:
        vals = np.zeros(len(gx))
    else:
        ex = gx[:, None] - field.cx[k]
        ey = gy[:, None] - field.cy[k]
        c, s = field._cos[k], field._sin[k]
        dx = c * ex + s * ey
        dy = -s * ex + c * ey
        vals = (field.weight[k] * np.exp(-(dx ** 2 / field.params.a ** 2 + dy ** 2 / field.params.b ** 2))).sum(1)
    return np.column_stack((gx, gy, vals))


def evaluate(field: RiskField, k: int, x: float, y: float) -> float:
    return field.evaluate(k, x, y)


def evaluate_gradient(field: RiskField, k: int, x: float, y: float) -> tuple[float, float]:
    return field.evaluate_gradient(k, x, y)
