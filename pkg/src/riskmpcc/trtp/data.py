"""Synthetic lane-following samples and the feature encoding shared with inference."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import InvalidInputError
from ..geometry import polyline_lengths, wrap_angle
from ..lane_graph import LaneGraph, TargetPath, enumerate_paths, load_map, locate_pieces
from ..prediction import HistoryTrack, PredictedTrajectory
from ..sim.scenario import SCENARIO_DIR

POS_SCALE = 10.0
SPEED_SCALE = 10.0
PATH_POINTS = 12
DT = 0.5


def to_frame(xy: np.ndarray, origin) -> np.ndarray:
    x0, y0, phi0 = origin
    c, s = math.cos(phi0), math.sin(phi0)
    d = np.asarray(xy, dtype=float)[..., :2] - (x0, y0)
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def from_frame(xy: np.ndarray, origin) -> np.ndarray:
    x0, y0, phi0 = origin
    c, s = math.cos(phi0), math.sin(phi0)
    d = np.asarray(xy, dtype=float)
    return np.stack([x0 + c * d[..., 0] - s * d[..., 1], y0 + s * d[..., 0] + c * d[..., 1]], axis=-1)


def history_features(track: HistoryTrack, origin) -> np.ndarray:
    s = track.samples
    xy = to_frame(s[:, 1:3], origin) / POS_SCALE
    return np.column_stack([xy, wrap_angle(s[:, 3] - origin[2]), s[:, 4] / SPEED_SCALE])


def path_features(path: TargetPath, origin, n_points: int = PATH_POINTS) -> np.ndarray:
    xy = path.xy
    s = polyline_lengths(xy)
    q = np.linspace(0.0, s[-1], n_points)
    px, py = np.interp(q, s, xy[:, 0]), np.interp(q, s, xy[:, 1])
    seg = np.clip(np.searchsorted(s, q, side="right") - 1, 0, len(xy) - 2)
    d = xy[seg + 1] - xy[seg]
    heading = np.arctan2(d[:, 1], d[:, 0])
    local = to_frame(np.column_stack([px, py]), origin) / POS_SCALE
    return np.column_stack([local, wrap_angle(heading - origin[2])])


def candidate_paths(graph: LaneGraph, pose, horizon_T: float, v_reach: float,
                    capture_radius: float = 2.0) -> list[TargetPath]:
    """Paths reachable from the pieces around ``pose``, deduplicated and sorted."""
    from ..prediction import _project_polyline  # same offset rule as the target-region predictor

    x, y = pose[0], pose[1]
    found: dict = {}
    for pid in locate_pieces(graph, (x, y), capture_radius):
        piece_xy = graph[pid].xy
        offset, _, _ = _project_polyline(piece_xy, polyline_lengths(piece_xy), x, y)
        for path in enumerate_paths(graph, [pid], horizon_T, v_reach, start_offset=offset):
            found[path.pieces] = path
    return [found[k] for k in sorted(found)]


@dataclass
class TrainingSample:
    target_history: HistoryTrack
    neighbor_histories: list
    path_set: list
    gt_trajectory: PredictedTrajectory
    gt_path_index: int
    # feature views, filled by featurize()
    history: np.ndarray = field(default=None, repr=False)
    neighbors: list = field(default_factory=list, repr=False)
    paths: list = field(default_factory=list, repr=False)
    gt: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.gt_path_index < len(self.path_set):
            raise InvalidInputError("gt_path_index outside the path set")
        if self.history is None:
            self.featurize()

    @property
    def gt_index(self) -> int:
        return self.gt_path_index

    @property
    def origin(self):
        last = self.target_history.last
        return float(last[1]), float(last[2]), float(last[3])

    def featurize(self):
        o = self.origin
        self.history = history_features(self.target_history, o)
        self.neighbors = [history_features(h, o) for h in self.neighbor_histories]
        self.paths = [path_features(p, o) for p in self.path_set]
        self.gt = to_frame(self.gt_trajectory.poses[:, :2], o)


@dataclass
class GeneratorConfig:
    map: str = "left_turn_map.json"
    n_samples: int = 64
    seed: int = 0
    horizon_steps: int = 12
    history_steps: int = 5
    speed_range: tuple = (2.0, 9.0)
    accel_range: tuple = (-0.5, 0.5)
    lateral_noise: float = 0.15
    max_neighbors: int = 2
    v_reach: float = 10.0


def _random_route(graph: LaneGraph, rng, min_length: float) -> list[str]:
    ids = sorted(graph.pieces)
    for _ in range(100):
        seq = [ids[rng.integers(len(ids))]]
        length = graph[seq[0]].length
        while length < min_length:
            nxt = [s for s in graph.successors(seq[-1]) if s not in seq]
            if not nxt:
                break
            seq.append(nxt[rng.integers(len(nxt))])
            length += graph[seq[-1]].length
        if length >= min_length:
            return seq
    raise InvalidInputError("map has no route long enough for the requested horizon")


def _pose_along(xy, s_xy, s):
    s = np.clip(s, 0.0, s_xy[-1])
    seg = np.clip(np.searchsorted(s_xy, s, side="right") - 1, 0, len(xy) - 2)
    d = xy[seg + 1] - xy[seg]
    heading = np.arctan2(d[:, 1], d[:, 0])
    return np.column_stack([np.interp(s, s_xy, xy[:, 0]), np.interp(s, s_xy, xy[:, 1]), heading])


def _drive(graph, rng, cfg: GeneratorConfig, with_future: bool):
    v = rng.uniform(*cfg.speed_range)
    a = rng.uniform(*cfg.accel_range)
    t_hist = DT * (np.arange(cfg.history_steps) - (cfg.history_steps - 1))
    t_fut = DT * np.arange(1, cfg.horizon_steps + 1)
    back = v * -t_hist[0] + 2.0
    ahead = v * t_fut[-1] + 0.5 * max(a, 0.0) * t_fut[-1] ** 2 + 5.0
    route = _random_route(graph, rng, back + ahead)
    path = graph.path_from_pieces(route)
    xy, s_xy = path.xy, polyline_lengths(path.xy)
    s_now = back + rng.uniform(0.0, max(0.0, s_xy[-1] - back - ahead))
    hist = _pose_along(xy, s_xy, s_now + v * t_hist)
    normal = np.column_stack([-np.sin(hist[:, 2]), np.cos(hist[:, 2])])
    hist[:, :2] += normal * rng.normal(0.0, cfg.lateral_noise, size=(len(hist), 1))
    samples = np.column_stack([t_hist, hist, np.full(len(hist), v), np.full(len(hist), 0.0), np.zeros(len(hist))])
    track = HistoryTrack(samples)
    if not with_future:
        return track, None, None
    s_fut = s_now + np.maximum.accumulate(np.maximum(v * t_fut + 0.5 * a * t_fut ** 2, 0.0))
    fut = _pose_along(xy, s_xy, s_fut)
    end_piece = route[min(int(np.searchsorted(np.cumsum([graph[p].length for p in route]), s_fut[-1])),
                          len(route) - 1)]
    return track, fut, end_piece


def generate(cfg: GeneratorConfig = GeneratorConfig(), graph: LaneGraph | None = None) -> list[TrainingSample]:
    """Vehicles driven along random routes with lateral noise, with their candidate path sets."""
    if cfg.n_samples < 1 or cfg.horizon_steps < 1 or cfg.history_steps < 1:
        raise InvalidInputError("generator sizes must be positive")
    if graph is None:
        path = SCENARIO_DIR / cfg.map if not str(cfg.map).startswith("/") else cfg.map
        graph = load_map(path)
    rng = np.random.default_rng(cfg.seed)
    horizon_T = DT * cfg.horizon_steps
    out = []
    attempts = 0
    while len(out) < cfg.n_samples:
        attempts += 1
        if attempts > 50 * cfg.n_samples:
            raise InvalidInputError("generator could not produce enough valid samples")
        track, fut, end_piece = _drive(graph, rng, cfg, True)
        last = track.last
        paths = candidate_paths(graph, (last[1], last[2]), horizon_T, cfg.v_reach)
        hits = [i for i, p in enumerate(paths) if end_piece in p.pieces]
        if not hits:
            continue
        neighbors = [_drive(graph, rng, cfg, False)[0] for _ in range(rng.integers(cfg.max_neighbors + 1))]
        gt = PredictedTrajectory(fut, DT, (float(last[1]), float(last[2]), float(last[3])))
        out.append(TrainingSample(track, neighbors, paths, gt, hits[0]))
    return out


def split(samples: Sequence[TrainingSample], holdout: float = 0.25):
    n_hold = max(1, int(round(len(samples) * holdout))) if len(samples) > 1 else 0
    return list(samples[n_hold:]), list(samples[:n_hold])
