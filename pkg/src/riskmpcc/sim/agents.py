"""Scripted background vehicles: pure-pursuit steering with an IDM speed law."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import ControlInput, VehicleLimits, VehicleState, integrate
from ..geometry import point_segment_distance, polyline_lengths, wrap_angle

AGENT_LIMITS = VehicleLimits(delta_rate_max=1.5, v_max=20.0)


@dataclass(frozen=True)
class IDMParams:
    desired_speed: float = 10.0
    time_headway: float = 1.0
    comfortable_decel: float = 2.0
    max_accel: float = 2.5
    min_gap: float = 2.0
    exponent: float = 4.0
    lateral_accel: float = 3.0


def idm_accel(v: float, gap: float | None, lead_v: float, p: IDMParams, v_desired: float | None = None) -> float:
    v0 = max(p.desired_speed if v_desired is None else v_desired, 0.1)
    free = 1.0 - (v / v0) ** p.exponent
    if gap is None:
        return p.max_accel * free
    s_star = p.min_gap + max(0.0, v * p.time_headway + v * (v - lead_v) / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel)))
    return p.max_accel * (free - (s_star / max(gap, 0.1)) ** 2)


class RoutePolyline:
    """Arc-length indexed polyline with windowed projection."""

    def __init__(self, points):
        self.xy = np.asarray(points, dtype=float)
        self.s = polyline_lengths(self.xy)
        d = np.diff(self.xy, axis=0)
        self.heading = np.arctan2(d[:, 1], d[:, 0])
        turn = np.abs(wrap_angle(np.diff(self.heading)))
        ds = 0.5 * (np.diff(self.s)[:-1] + np.diff(self.s)[1:])
        curv = np.concatenate(([0.0], turn / np.maximum(ds, 1e-6), [0.0]))
        self.curvature = curv  # per vertex

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def point(self, s: float) -> tuple[float, float]:
        s = min(max(s, 0.0), self.length)
        return float(np.interp(s, self.s, self.xy[:, 0])), float(np.interp(s, self.s, self.xy[:, 1]))

    def heading_at(self, s: float) -> float:
        i = int(np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.heading) - 1))
        return float(self.heading[i])

    def project(self, x: float, y: float, s_lo: float = 0.0, s_hi: float | None = None) -> tuple[float, float]:
        """(arc length, lateral distance) of the closest point within [s_lo, s_hi]."""
        s_hi = self.length if s_hi is None else s_hi
        i0 = int(np.clip(np.searchsorted(self.s, s_lo, side="right") - 1, 0, len(self.s) - 2))
        i1 = int(np.clip(np.searchsorted(self.s, s_hi, side="right"), i0 + 1, len(self.s) - 1))
        a, b = self.xy[i0:i1], self.xy[i0 + 1 : i1 + 1]
        d, t = point_segment_distance(x, y, a[:, 0], a[:, 1], b[:, 0], b[:, 1])
        j = int(np.argmin(d))
        return float(self.s[i0 + j] + t[j] * (self.s[i0 + j + 1] - self.s[i0 + j])), float(d[j])

    def max_curvature(self, s0: float, s1: float) -> float:
        mask = (self.s >= s0) & (self.s <= s1)
        return float(self.curvature[mask].max()) if mask.any() else 0.0


@dataclass
class Agent:
    id: str
    route: RoutePolyline
    state: VehicleState
    idm: IDMParams
    ignores_others: bool = False
    limits: VehicleLimits = AGENT_LIMITS
    s: float = 0.0
    active: bool = True
    lanes: tuple[str, ...] = ()
    log: dict = field(default_factory=dict)

    def lookahead(self) -> float:
        return max(4.0, 0.8 * self.state.v)

    def steering_rate(self, dt: float) -> float:
        st = self.state
        tx, ty = self.route.point(self.s + self.lookahead())
        alpha = wrap_angle(math.atan2(ty - st.y, tx - st.x) - st.phi)
        ld = max(math.hypot(tx - st.x, ty - st.y), 1e-3)
        delta_cmd = math.atan2(2.0 * self.limits.wheelbase_L * math.sin(alpha), ld)
        delta_cmd = min(max(delta_cmd, -self.limits.delta_max), self.limits.delta_max)
        return min(max((delta_cmd - st.delta) / dt, -self.limits.delta_rate_max), self.limits.delta_rate_max)

    def desired_speed(self) -> float:
        kappa = self.route.max_curvature(self.s, self.s + max(10.0, 1.5 * self.state.v))
        v = self.idm.desired_speed
        if kappa > 1e-6:
            v = min(v, math.sqrt(self.idm.lateral_accel / kappa))
        return v

    def leader_gap(self, others, footprint_half_length: float) -> tuple[float | None, float]:
        """Gap to the closest vehicle ahead on this agent's route, and its speed."""
        best, lead_v = None, 0.0
        window = 60.0
        for ox, oy, ov, ohl in others:
            if math.hypot(ox - self.state.x, oy - self.state.y) > window:
                continue
            s_o, lat = self.route.project(ox, oy, self.s - 1.0, self.s + window)
            if lat > 2.0 or s_o <= self.s:
                continue
            gap = s_o - self.s - footprint_half_length - ohl
            if best is None or gap < best:
                best, lead_v = gap, ov
        return best, lead_v

    def step(self, others, dt: float, half_length: float) -> None:
        if not self.active:
            return
        gap, lead_v = (None, 0.0) if self.ignores_others else self.leader_gap(others, half_length)
        accel = idm_accel(self.state.v, gap, lead_v, self.idm, self.desired_speed())
        accel = min(max(accel, self.limits.a_min), self.limits.a_max)
        u = ControlInput(self.steering_rate(dt), accel)
        self.state, _ = integrate(self.state, u, self.limits, dt)
        self.s, _ = self.route.project(self.state.x, self.state.y, self.s - 2.0, self.s + 2.0 + self.state.v * dt * 2)
        if self.s >= self.route.length - 1.0:
            self.active = False
