"""Closed-loop predictor backed by a trained toy TRTP checkpoint."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..geometry import wrap_angle
from ..prediction import (DEFAULT_DT_PRED, HistoryTrack, PredictedTrajectory, PredictionSet,
                          predict_constant_speed)
from .data import DT, candidate_paths, from_frame, history_features, path_features
from .network import NetParams, decode, encode, load_checkpoint


def resample_history(history: HistoryTrack, stride: float = DT, count: int = 5) -> HistoryTrack:
    """Pick the samples nearest to t_last, t_last - stride, ... (the training cadence)."""
    t = history.samples[:, 0]
    wanted = t[-1] - stride * np.arange(count)[::-1]
    wanted = wanted[wanted >= t[0] - 1e-9]
    idx = np.unique(np.abs(t[None, :] - wanted[:, None]).argmin(axis=1))
    return HistoryTrack(history.samples[idx])


@dataclass
class TRTPPredictor:
    params: NetParams
    v_reach: float = 10.0
    capture_radius: float = 2.0

    @classmethod
    def from_options(cls, checkpoint: str | None = None, **options) -> "TRTPPredictor":
        if checkpoint is None:
            raise InvalidInputError("trtp_toy predictor needs a 'checkpoint' path")
        return cls(load_checkpoint(checkpoint), **options)

    def __call__(self, history, graph, neighbors=()):
        history = resample_history(history)
        neighbors = [resample_history(n) for n in neighbors]
        last = history.last
        origin = (float(last[1]), float(last[2]), float(last[3]))
        horizon_T = DT * self.params.dims.horizon
        paths = candidate_paths(graph, origin, horizon_T, self.v_reach, self.capture_radius)
        if not paths:
            return predict_constant_speed(history, horizon_T, DEFAULT_DT_PRED, ("fallback:no-paths",))
        act = encode(self.params, history_features(history, origin),
                     [history_features(n, origin) for n in neighbors],
                     [path_features(p, origin) for p in paths])
        traj, probs, _ = decode(self.params, act.e_updated, act.e_paths)
        out = []
        for local, path in zip(traj, paths):
            xy = from_frame(local[:, :2], origin)
            phi = wrap_angle(local[:, 2] + origin[2])
            out.append(PredictedTrajectory(np.column_stack([xy, phi]), DT, origin, path.id))
        probs = np.asarray(probs, dtype=float)
        return PredictionSet(tuple(out), probs / probs.sum())
