"""Prediction contract and the non-neural reference predictors.

Every predictor maps a vehicle's history to a :class:`PredictionSet`: a list of
pose sequences sampled every ``dt_pred`` seconds (first pose one stride ahead)
together with a probability per sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import point_segment_distance, polyline_lengths, wrap_angle
from .lane_graph import LaneGraph, TargetPath, enumerate_paths, locate_pieces

DEFAULT_DT_PRED = 0.5
DEFAULT_HORIZON = 4.0


@dataclass(frozen=True, eq=False)
class HistoryTrack:
    """Past states, one row per sample: t, x, y, phi, v, a, w."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if arr.shape[0] < 1 or arr.shape[1] != 7:
            raise InvalidInputError("history needs >= 1 sample of 7 fields")
        if np.any(np.diff(arr[:, 0]) <= 0):
            raise InvalidInputError("history timestamps must increase strictly")
        object.__setattr__(self, "samples", arr)

    @property
    def duration(self) -> float:
        return float(self.samples[-1, 0] - self.samples[0, 0])

    @property
    def last(self) -> np.ndarray:
        return self.samples[-1]

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True, eq=False)
class PredictedTrajectory:
    """Poses (x, y, phi) at t = dt_pred, 2*dt_pred, ...; ``origin`` is the pose at t = 0."""

    poses: np.ndarray
    dt_pred: float
    origin: tuple[float, float, float] | None = None
    source_path: str | None = None

    def __post_init__(self):
        poses = np.atleast_2d(np.asarray(self.poses, dtype=float))
        if poses.shape[1] != 3 or not np.all(np.isfinite(poses)):
            raise InvalidInputError("poses must be finite (T, 3)")
        object.__setattr__(self, "poses", poses)

    @property
    def horizon_steps(self) -> int:
        return len(self.poses)


@dataclass(frozen=True, eq=False)
class PredictionSet:
    trajectories: tuple[PredictedTrajectory, ...]
    probabilities: np.ndarray
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(self, "probabilities", p)
        if len(self.trajectories) == 0 or len(p) != len(self.trajectories):
            raise InvalidInputError("need one probability per trajectory, at least one trajectory")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise InvalidInputError("probabilities must be non-negative and sum to 1")

    def __len__(self):
        return len(self.trajectories)


def softmax(scores: Sequence[float]) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    e = np.exp(s - s.max())
    p = e / e.sum()
    # renormalize the residual rounding onto the largest entry
    p[np.argmax(p)] += 1.0 - p.sum()
    return p


def _steps(horizon_T: float, dt_pred: float) -> int:
    if not (horizon_T > 0 and dt_pred > 0):
        raise InvalidInputError("horizon and stride must be positive")
    return max(1, int(round(horizon_T / dt_pred)))


def predict_constant_speed(history: HistoryTrack, horizon_T: float = DEFAULT_HORIZON,
                           dt_pred: float = DEFAULT_DT_PRED, flags: tuple[str, ...] = ()) -> PredictionSet:
    """Straight-line extrapolation of the last pose at constant speed."""
    _, x, y, phi, v, _, _ = history.last
    n = _steps(horizon_T, dt_pred)
    t = dt_pred * np.arange(1, n + 1)
    poses = np.column_stack((x + v * t * math.cos(phi), y + v * t * math.sin(phi), np.full(n, phi)))
    traj = PredictedTrajectory(poses, dt_pred, (float(x), float(y), float(phi)))
    return PredictionSet((traj,), np.array([1.0]), flags)


@dataclass(frozen=True)
class TargetRegionConfig:
    w_head: float = 2.0
    w_lat: float = 1.0
    w_spd: float = 0.5
    v_max: float = 15.0
    capture_radius: float = 2.0
    # speed-profile blend rate toward the path's nominal speed, m/s^2
    accel: float = 2.0
    default_speed: float = 8.0


def path_nominal_speed(graph: LaneGraph, path: TargetPath, default: float) -> float:
    limits = [graph[p].speed_limit for p in path.pieces if graph[p].speed_limit is not None]
    return min(limits) if limits else default


def _project_polyline(xy: np.ndarray, s: np.ndarray, x: float, y: float) -> tuple[float, float, int]:
    d, t = point_segment_distance(x, y, xy[:-1, 0], xy[:-1, 1], xy[1:, 0], xy[1:, 1])
    j = int(np.argmin(d))
    return float(s[j] + t[j] * (s[j + 1] - s[j])), float(d[j]), j


def speed_profile_distance(v0: float, v_target: float, accel: float, t: np.ndarray) -> np.ndarray:
    """Distance covered when speed ramps linearly from v0 to v_target at ``accel``, then holds."""
    dv = v_target - v0
    if dv == 0 or accel <= 0:
        return v0 * t
    t_ramp = abs(dv) / accel
    a = math.copysign(accel, dv)
    ramp = v0 * np.minimum(t, t_ramp) + 0.5 * a * np.minimum(t, t_ramp) ** 2
    return ramp + v_target * np.maximum(t - t_ramp, 0.0)


def trajectory_along(xy: np.ndarray, s_along: np.ndarray) -> np.ndarray:
    """Poses on a polyline at arc lengths ``s_along`` (clamped to the polyline)."""
    s = polyline_lengths(xy)
    q = np.clip(s_along, 0.0, s[-1])
    seg = np.clip(np.searchsorted(s, q, side="right") - 1, 0, len(xy) - 2)
    u = (q - s[seg]) / (s[seg + 1] - s[seg])
    pts = xy[seg] + u[:, None] * (xy[seg + 1] - xy[seg])
    d = xy[seg + 1] - xy[seg]
    return np.column_stack((pts, np.arctan2(d[:, 1], d[:, 0])))


def score_path(graph: LaneGraph, path: TargetPath, state, cfg: TargetRegionConfig) -> dict:
    """Path geometry relative to the vehicle and the resulting softmax score."""
    x, y, phi, v = state
    xy = path.xy
    s = polyline_lengths(xy)
    s0, lateral, j = _project_polyline(xy, s, x, y)
    heading = math.atan2(xy[j + 1, 1] - xy[j, 1], xy[j + 1, 0] - xy[j, 0])
    misalign = abs(wrap_angle(phi - heading))
    v_nom = path_nominal_speed(graph, path, cfg.default_speed)
    score = -cfg.w_head * misalign - cfg.w_lat * lateral - cfg.w_spd * abs(v_nom - v)
    return {"s0": s0, "lateral": lateral, "misalignment": misalign, "v_nominal": v_nom, "score": score}


def predict_target_region(history: HistoryTrack, graph: LaneGraph, horizon_T: float = DEFAULT_HORIZON,
                          dt_pred: float = DEFAULT_DT_PRED, config: TargetRegionConfig | None = None) -> PredictionSet:
    """One trajectory per reachable target path, weighted by a softmax over path scores."""
    cfg = config or TargetRegionConfig()
    _, x, y, phi, v, _, _ = history.last
    starts = locate_pieces(graph, (x, y), cfg.capture_radius)
    if not starts:
        return predict_constant_speed(history, horizon_T, dt_pred, ("fallback:unlocated",))

    limits = [p.speed_limit for p in graph.pieces.values() if p.speed_limit is not None]
    v_reach = min(cfg.v_max, max(v, max(limits) if limits else cfg.default_speed, 1e-3))
    paths: dict[tuple[str, ...], TargetPath] = {}
    for pid in starts:
        piece_xy = graph[pid].xy
        offset, _, _ = _project_polyline(piece_xy, polyline_lengths(piece_xy), x, y)
        for path in enumerate_paths(graph, [pid], horizon_T, v_reach, start_offset=offset):
            paths[path.pieces] = path
    if not paths:
        return predict_constant_speed(history, horizon_T, dt_pred, ("fallback:no-paths",))

    n = _steps(horizon_T, dt_pred)
    t = dt_pred * np.arange(1, n + 1)
    trajectories, scores = [], []
    for key in sorted(paths):
        path = paths[key]
        info = score_path(graph, path, (x, y, phi, v), cfg)
        dist = speed_profile_distance(v, info["v_nominal"], cfg.accel, t)
        poses = trajectory_along(path.xy, info["s0"] + dist)
        trajectories.append(PredictedTrajectory(poses, dt_pred, (float(x), float(y), float(phi)), path.id))
        scores.append(info["score"])
    return PredictionSet(tuple(trajectories), softmax(scores))


class Predictor(Protocol):
    def __call__(self, history: HistoryTrack, graph: LaneGraph, neighbors: Sequence[HistoryTrack] = ()) -> PredictionSet: ...


@dataclass
class ConstantSpeedPredictor:
    horizon_T: float = DEFAULT_HORIZON
    dt_pred: float = DEFAULT_DT_PRED

    def __call__(self, history, graph=None, neighbors=()):
        return predict_constant_speed(history, self.horizon_T, self.dt_pred)


@dataclass
class TargetRegionPredictor:
    horizon_T: float = DEFAULT_HORIZON
    dt_pred: float = DEFAULT_DT_PRED
    config: TargetRegionConfig = field(default_factory=TargetRegionConfig)

    def __call__(self, history, graph, neighbors=()):
        return predict_target_region(history, graph, self.horizon_T, self.dt_pred, self.config)


PREDICTOR_NAMES = ("csp", "target_region", "trtp_toy")


def make_predictor(name: str, **options) -> Callable:
    """Build a predictor from its scenario-config name."""
    if name == "csp":
        return ConstantSpeedPredictor(**options)
    if name == "target_region":
        cfg = options.pop("config", None)
        if isinstance(cfg, dict):
            cfg = TargetRegionConfig(**cfg)
        return TargetRegionPredictor(config=cfg or TargetRegionConfig(), **options)
    if name == "trtp_toy":
        from .trtp.predictor import TRTPPredictor

        return TRTPPredictor.from_options(**options)
    raise InvalidInputError(f"unknown predictor {name!r}; expected one of {PREDICTOR_NAMES}")
