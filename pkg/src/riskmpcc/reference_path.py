"""Arc-length parameterized reference path built from a route polyline."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import point_segment_distance, polyline_lengths, wrap_angle

DEFAULT_RESAMPLE_STEP = 0.5
DEFAULT_HINT_WINDOW = 20.0
# half-width of the band around interior knots where heading turns on the circle
HEADING_BLEND = 5e-4
_SPLINE_SAMPLES = 32


def _centripetal_catmull_rom(points: np.ndarray, samples: int = _SPLINE_SAMPLES) -> np.ndarray:
    """Dense samples of a centripetal Catmull-Rom spline through ``points``."""
    ext = np.vstack((2 * points[0] - points[1], points, 2 * points[-1] - points[-2]))
    out = [points[:1]]
    u = np.linspace(0.0, 1.0, samples + 1)[1:, None]
    for i in range(1, len(ext) - 2):
        p0, p1, p2, p3 = ext[i - 1], ext[i], ext[i + 1], ext[i + 2]
        t0 = 0.0
        t1 = t0 + math.sqrt(np.linalg.norm(p1 - p0))
        t2 = t1 + math.sqrt(np.linalg.norm(p2 - p1))
        t3 = t2 + math.sqrt(np.linalg.norm(p3 - p2))
        t = t1 + u * (t2 - t1)
        a1 = (t1 - t) / (t1 - t0) * p0 + (t - t0) / (t1 - t0) * p1
        a2 = (t2 - t) / (t2 - t1) * p1 + (t - t1) / (t2 - t1) * p2
        a3 = (t3 - t) / (t3 - t2) * p2 + (t - t2) / (t3 - t2) * p3
        b1 = (t2 - t) / (t2 - t0) * a1 + (t - t0) / (t2 - t0) * a2
        b2 = (t3 - t) / (t3 - t1) * a2 + (t - t1) / (t3 - t1) * a3
        seg = (t2 - t) / (t2 - t1) * b1 + (t - t1) / (t2 - t1) * b2
        seg[-1] = p2
        out.append(seg)
    return np.vstack(out)


@dataclass(frozen=True, eq=False)
class ReferencePath:
    """Piecewise-linear path through uniformly spaced knots.

    Position is linear between knots. Heading equals the segment direction
    inside each segment and turns on the circle within ``HEADING_BLEND`` of an
    interior knot, so ``headings[j]`` is the circular mean of the two
    adjacent segment directions.
    """

    knots: np.ndarray
    positions: np.ndarray
    headings: np.ndarray
    segment_headings: np.ndarray
    total_length: float

    @classmethod
    def from_knots(cls, positions: np.ndarray) -> "ReferencePath":
        positions = np.asarray(positions, dtype=float)
        knots = polyline_lengths(positions)
        d = np.diff(positions, axis=0)
        seg_h = np.arctan2(d[:, 1], d[:, 0])
        headings = np.empty(len(positions))
        headings[0] = seg_h[0]
        headings[-1] = seg_h[-1]
        if len(seg_h) > 1:
            headings[1:-1] = wrap_angle(seg_h[:-1] + 0.5 * wrap_angle(seg_h[1:] - seg_h[:-1]))
        return cls(knots, positions, headings, seg_h, float(knots[-1]))

    @property
    def n_segments(self) -> int:
        return len(self.knots) - 1

    def _clamp(self, theta):
        return np.clip(theta, 0.0, self.total_length)

    def sample(self, theta: float) -> tuple[float, float, float]:
        """(x, y, phi) at arc length ``theta``; out-of-range values are clamped."""
        x, y, phi, _ = self.sample_with_flag(theta)
        return x, y, phi

    def sample_with_flag(self, theta: float) -> tuple[float, float, float, bool]:
        theta = float(theta)
        if not math.isfinite(theta):
            raise InvalidInputError("non-finite theta")
        clamped = theta < 0.0 or theta > self.total_length
        x, y, phi = self.sample_many(np.array([theta]))
        return float(x[0]), float(y[0]), float(phi[0]), clamped

    def segment_index(self, theta: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.knots, theta, side="right") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def sample_many(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized sample over an array of arc lengths (clamped)."""
        theta = self._clamp(np.asarray(theta, dtype=float))
        idx = self.segment_index(theta)
        s0 = self.knots[idx]
        seg_len = self.knots[idx + 1] - s0
        u = (theta - s0) / seg_len
        p = self.positions[idx] + u[:, None] * (self.positions[idx + 1] - self.positions[idx])
        phi = self.segment_headings[idx].copy()

        # blend into the neighbouring segment near interior knots
        prev_h = self.segment_headings[np.maximum(idx - 1, 0)]
        next_h = self.segment_headings[np.minimum(idx + 1, self.n_segments - 1)]
        near_start = (theta - s0 < HEADING_BLEND) & (idx > 0)
        near_end = (self.knots[idx + 1] - theta < HEADING_BLEND) & (idx < self.n_segments - 1)
        if np.any(near_start):
            w = 0.5 + 0.5 * (theta - s0) / HEADING_BLEND
            blended = prev_h + w * wrap_angle(phi - prev_h)
            phi = np.where(near_start, blended, phi)
        if np.any(near_end):
            w = 0.5 * (self.knots[idx + 1] - theta) / HEADING_BLEND
            blended = next_h + (0.5 + w) * wrap_angle(self.segment_headings[idx] - next_h)
            phi = np.where(near_end, blended, phi)
        return p[:, 0], p[:, 1], wrap_angle(phi)

    def project(self, x: float, y: float, hint_theta: float | None = None, window: float = DEFAULT_HINT_WINDOW) -> float:
        """Arc length of the closest path point to (x, y).

        With a hint the search only considers segments overlapping
        ``[hint - window, hint + window]``.
        """
        if not (math.isfinite(x) and math.isfinite(y)):
            raise InvalidInputError("non-finite query point")
        lo, hi = 0, self.n_segments
        if hint_theta is not None:
            if not math.isfinite(hint_theta):
                raise InvalidInputError("non-finite hint")
            lo = int(self.segment_index(np.array([hint_theta - window]))[0])
            hi = int(self.segment_index(np.array([hint_theta + window]))[0]) + 1
        a = self.positions[lo:hi]
        b = self.positions[lo + 1 : hi + 1]
        d, t = point_segment_distance(x, y, a[:, 0], a[:, 1], b[:, 0], b[:, 1])
        j = int(np.argmin(d))
        return float(self.knots[lo + j] + t[j] * (self.knots[lo + j + 1] - self.knots[lo + j]))


def from_polyline(points, resample_step: float = DEFAULT_RESAMPLE_STEP) -> ReferencePath:
    """Fit a centripetal spline through ``points`` and resample it every ``resample_step`` meters."""
    pts = np.asarray([(float(p[0]), float(p[1])) for p in points], dtype=float)
    if len(pts) < 2:
        raise InvalidInputError("need at least two points")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("non-finite points")
    if not resample_step > 0:
        raise InvalidInputError("resample_step must be positive")
    if np.any(np.hypot(*np.diff(pts, axis=0).T) <= 1e-9):
        raise InvalidInputError("duplicate consecutive points")

    dense = pts if len(pts) == 2 else _centripetal_catmull_rom(pts)
    s = polyline_lengths(dense)
    keep = np.concatenate(([True], np.diff(s) > 1e-12))
    dense, s = dense[keep], s[keep]
    total = float(s[-1])
    n = max(1, int(math.ceil(total / resample_step - 1e-9)))
    grid = np.minimum(np.arange(n + 1) * resample_step, total)
    grid[-1] = total
    if n > 1 and total - grid[-2] < 0.1 * resample_step:
        grid = np.delete(grid, -2)
    knots_xy = np.column_stack((np.interp(grid, s, dense[:, 0]), np.interp(grid, s, dense[:, 1])))
    return ReferencePath.from_knots(knots_xy)
