"""Kinematic bicycle model (rear-axle reference point) and its integrators."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError, SingularSteeringError
from .geometry import wrap_angle


@dataclass(frozen=True)
class VehicleLimits:
    wheelbase_L: float = 2.9
    delta_max: float = 0.52
    delta_rate_max: float = 0.7
    a_min: float = -6.0
    a_max: float = 3.0
    v_min: float = 0.0
    v_max: float = 15.0
    half_length: float = 2.3
    half_width: float = 0.95

    def __post_init__(self):
        if not self.wheelbase_L > 0:
            raise InvalidInputError("wheelbase must be positive")
        if not (self.delta_max > 0 and self.delta_rate_max > 0):
            raise InvalidInputError("steering limits must be positive")
        if not (self.a_max > self.a_min and self.v_max > self.v_min):
            raise InvalidInputError("limit maxima must exceed minima")
        if not (self.half_length > 0 and self.half_width > 0):
            raise InvalidInputError("footprint must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleLimits":
        return cls(**d)


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    phi: float = 0.0
    delta: float = 0.0
    v: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "phi", wrap_angle(self.phi))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi, self.delta, self.v])

    @classmethod
    def from_array(cls, a) -> "VehicleState":
        return cls(*(float(v) for v in a[:5]))


@dataclass(frozen=True)
class ControlInput:
    delta_rate: float = 0.0
    accel: float = 0.0

    def clipped(self, limits: VehicleLimits) -> "ControlInput":
        return ControlInput(
            min(max(self.delta_rate, -limits.delta_rate_max), limits.delta_rate_max),
            min(max(self.accel, limits.a_min), limits.a_max),
        )


def _check_steering(delta: float):
    if abs(delta) >= math.pi / 2:
        raise SingularSteeringError(f"steering angle {delta} is singular")


def derivative(state: VehicleState, u: ControlInput, limits: VehicleLimits) -> np.ndarray:
    """Time derivative [x', y', phi', delta', v'] of the bicycle model."""
    vals = (state.x, state.y, state.phi, state.delta, state.v, u.delta_rate, u.accel)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidInputError("non-finite state or input")
    _check_steering(state.delta)
    return np.array(_f(state.phi, state.delta, state.v, u.delta_rate, u.accel, limits.wheelbase_L))


def _f(phi, delta, v, ddelta, accel, L):
    return (v * math.cos(phi), v * math.sin(phi), v / L * math.tan(delta), ddelta, accel)


def _rk4_raw(s, ddelta, accel, L, dt):
    x, y, phi, delta, v = s
    k1 = _f(phi, delta, v, ddelta, accel, L)
    s2 = [s[i] + 0.5 * dt * k1[i] for i in range(5)]
    _check_steering(s2[3])
    k2 = _f(s2[2], s2[3], s2[4], ddelta, accel, L)
    s3 = [s[i] + 0.5 * dt * k2[i] for i in range(5)]
    _check_steering(s3[3])
    k3 = _f(s3[2], s3[3], s3[4], ddelta, accel, L)
    s4 = [s[i] + dt * k3[i] for i in range(5)]
    _check_steering(s4[3])
    k4 = _f(s4[2], s4[3], s4[4], ddelta, accel, L)
    return [s[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(5)]


def integrate(state: VehicleState, u: ControlInput, limits: VehicleLimits, dt: float) -> tuple[VehicleState, bool]:
    """One RK4 step with inputs held over ``dt``.

    Returns the new state and a flag telling whether steering or speed had to
    be clamped to the limits.
    """
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    derivative(state, u, limits)  # validates inputs
    x, y, phi, delta, v = _rk4_raw(
        (state.x, state.y, state.phi, state.delta, state.v), u.delta_rate, u.accel, limits.wheelbase_L, dt
    )
    cd = min(max(delta, -limits.delta_max), limits.delta_max)
    cv = min(max(v, limits.v_min), limits.v_max)
    saturated = cd != delta or cv != v
    return VehicleState(x, y, phi, cd, cv), saturated


def integrate_euler(state: VehicleState, u: ControlInput, limits: VehicleLimits, dt: float) -> VehicleState:
    """Explicit Euler step, unclamped; used for convergence comparisons."""
    d = derivative(state, u, limits)
    return VehicleState.from_array(state.as_array() + dt * d)


def with_speed(state: VehicleState, v: float) -> VehicleState:
    return replace(state, v=v)
