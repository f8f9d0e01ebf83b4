"""Small planar geometry helpers."""
from __future__ import annotations

import math

import numpy as np


def wrap_angle(angle):
    """Map an angle (scalar or array) into (-pi, pi]."""
    if np.ndim(angle) == 0:
        a = math.fmod(float(angle) + math.pi, 2.0 * math.pi)
        if a <= 0.0:
            a += 2.0 * math.pi
        return a - math.pi
    arr = np.asarray(angle, dtype=float)
    out = np.mod(arr + np.pi, 2.0 * np.pi)
    out = np.where(out <= 0.0, out + 2.0 * np.pi, out)
    return out - np.pi


def angle_diff(a, b):
    """Signed shortest angular difference a - b in (-pi, pi]."""
    return wrap_angle(np.subtract(a, b))


def point_segment_distance(px, py, ax, ay, bx, by):
    """Distance from points to segments, vectorized over broadcastable arrays.

    Returns ``(distance, t)`` where ``t`` in [0, 1] is the foot parameter.
    """
    dx = bx - ax
    dy = by - ay
    seg2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = ((px - ax) * dx + (py - ay) * dy) / seg2
    t = np.where(seg2 > 0.0, np.clip(t, 0.0, 1.0), 0.0)
    fx = ax + t * dx - px
    fy = ay + t * dy - py
    return np.hypot(fx, fy), t


def polyline_lengths(points: np.ndarray) -> np.ndarray:
    """Cumulative chord length along an (n, 2) polyline, starting at 0."""
    seg = np.hypot(np.diff(points[:, 0]), np.diff(points[:, 1]))
    return np.concatenate(([0.0], np.cumsum(seg)))
