"""Lane-piece graph built from lane centerlines, with path enumeration and A* routing.

Lanes are cut into pieces of (nearly) equal length. Pieces are linked by the
successor relation only; lateral lane changes are not represented.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidInputError, NoRouteError
from .geometry import point_segment_distance, polyline_lengths, wrap_angle

DEFAULT_PIECE_LENGTH = 5.0
DEFAULT_CAPTURE_RADIUS = 2.0
REMAINDER_FRACTION = 0.25
_JOIN_TOL = 1e-6


@dataclass(frozen=True)
class CenterPoint:
    x: float
    y: float
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "phi", wrap_angle(self.phi))


@dataclass(frozen=True)
class LanePiece:
    id: str
    lane_id: str
    centerline: tuple[CenterPoint, ...]
    length: float
    successors: tuple[str, ...] = ()
    speed_limit: float | None = None

    @property
    def xy(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.centerline])

    @property
    def start(self) -> CenterPoint:
        return self.centerline[0]

    @property
    def end(self) -> CenterPoint:
        return self.centerline[-1]


@dataclass(frozen=True)
class LaneSpec:
    """One input lane: a centerline polyline and the ids of the lanes it feeds."""

    id: str
    points: tuple[tuple[float, float], ...]
    successors: tuple[str, ...] = ()
    speed_limit: float | None = None


@dataclass(frozen=True)
class TargetPath:
    pieces: tuple[str, ...]
    concatenated_centerline: tuple[CenterPoint, ...]
    length: float

    @property
    def id(self) -> str:
        return "/".join(self.pieces)

    @property
    def xy(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.concatenated_centerline])


class LaneGraph:
    """Immutable collection of lane pieces with their successor relation."""

    def __init__(self, pieces: Iterable[LanePiece], piece_length: float = DEFAULT_PIECE_LENGTH):
        self.piece_length = piece_length
        self.pieces: dict[str, LanePiece] = {}
        for piece in pieces:
            if piece.id in self.pieces:
                raise InvalidInputError(f"duplicate piece id {piece.id!r}")
            self.pieces[piece.id] = piece
        for piece in self.pieces.values():
            for s in piece.successors:
                if s not in self.pieces:
                    raise InvalidInputError(f"piece {piece.id!r} links to unknown piece {s!r}")
        self.adjacency: dict[str, tuple[str, ...]] = {
            pid: tuple(sorted(p.successors)) for pid, p in self.pieces.items()
        }
        self._build_segment_index()

    def _build_segment_index(self):
        ax, ay, bx, by, owner = [], [], [], [], []
        self._ids = sorted(self.pieces)
        for idx, pid in enumerate(self._ids):
            xy = self.pieces[pid].xy
            ax.append(xy[:-1, 0])
            ay.append(xy[:-1, 1])
            bx.append(xy[1:, 0])
            by.append(xy[1:, 1])
            owner.append(np.full(len(xy) - 1, idx))
        if self._ids:
            self._seg = tuple(np.concatenate(a) for a in (ax, ay, bx, by))
            self._seg_owner = np.concatenate(owner)
        else:
            self._seg = tuple(np.empty(0) for _ in range(4))
            self._seg_owner = np.empty(0, dtype=int)

    def __len__(self):
        return len(self.pieces)

    def __contains__(self, pid):
        return pid in self.pieces

    def __getitem__(self, pid) -> LanePiece:
        return self.pieces[pid]

    def successors(self, pid: str) -> tuple[str, ...]:
        return self.adjacency[pid]

    def lane_pieces(self, lane_id: str) -> list[str]:
        return sorted(pid for pid, p in self.pieces.items() if p.lane_id == lane_id)

    def distances(self, x: float, y: float) -> dict[str, float]:
        """Minimum distance from (x, y) to every piece centerline."""
        d, _ = point_segment_distance(x, y, *self._seg)
        best = np.full(len(self._ids), np.inf)
        np.minimum.at(best, self._seg_owner, d)
        return dict(zip(self._ids, best.tolist()))

    def path_from_pieces(self, piece_ids: Sequence[str]) -> TargetPath:
        points = concatenate_centerlines([self.pieces[p].centerline for p in piece_ids])
        length = sum(self.pieces[p].length for p in piece_ids)
        return TargetPath(tuple(piece_ids), points, length)


def concatenate_centerlines(lines: Sequence[Sequence[CenterPoint]]) -> tuple[CenterPoint, ...]:
    out: list[CenterPoint] = []
    for line in lines:
        for p in line:
            if out and math.hypot(p.x - out[-1].x, p.y - out[-1].y) <= _JOIN_TOL:
                continue
            out.append(p)
    return tuple(out)


def _headed_points(xy: np.ndarray) -> tuple[CenterPoint, ...]:
    seg_heading = np.arctan2(np.diff(xy[:, 1]), np.diff(xy[:, 0]))
    headings = np.concatenate((seg_heading, seg_heading[-1:]))
    return tuple(CenterPoint(float(x), float(y), float(h)) for (x, y), h in zip(xy, headings))


def _cut_polyline(xy: np.ndarray, s: np.ndarray, s0: float, s1: float) -> np.ndarray:
    """Sub-polyline of ``xy`` between arc lengths s0 < s1, keeping interior vertices."""
    x0 = np.interp(s0, s, xy[:, 0]), np.interp(s0, s, xy[:, 1])
    x1 = np.interp(s1, s, xy[:, 0]), np.interp(s1, s, xy[:, 1])
    inner = (s > s0 + _JOIN_TOL) & (s < s1 - _JOIN_TOL)
    return np.vstack((x0, xy[inner], x1))


def _piece_bounds(total: float, piece_length: float) -> list[tuple[float, float]]:
    n = int(math.floor(total / piece_length + 1e-9))
    if n == 0:
        return [(0.0, total)]
    cuts = [i * piece_length for i in range(n + 1)]
    remainder = total - cuts[-1]
    if remainder >= REMAINDER_FRACTION * piece_length:
        cuts.append(total)
    else:
        cuts[-1] = total
    return list(zip(cuts[:-1], cuts[1:]))


def split_lanes(lanes: Sequence[LaneSpec], piece_length: float = DEFAULT_PIECE_LENGTH) -> LaneGraph:
    """Partition every lane into pieces of ``piece_length`` and link them.

    A trailing remainder shorter than a quarter piece is merged into the
    previous piece. The last piece of a lane feeds the first piece of each of
    the lane's successor lanes.
    """
    if not lanes:
        raise InvalidInputError("empty lane set")
    if not piece_length > 0:
        raise InvalidInputError("piece_length must be positive")
    lane_ids = [lane.id for lane in lanes]
    if len(set(lane_ids)) != len(lane_ids):
        raise InvalidInputError("duplicate lane ids")
    known = set(lane_ids)

    chains: dict[str, list[tuple[str, np.ndarray, float]]] = {}
    for lane in lanes:
        xy = np.asarray(lane.points, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2 or len(xy) < 2:
            raise InvalidInputError(f"lane {lane.id!r} needs at least two (x, y) points")
        if not np.all(np.isfinite(xy)):
            raise InvalidInputError(f"lane {lane.id!r} has non-finite coordinates")
        s = polyline_lengths(xy)
        if np.any(np.diff(s) <= 0.0):
            raise InvalidInputError(f"lane {lane.id!r} has a zero-length segment")
        for succ in lane.successors:
            if succ not in known:
                raise InvalidInputError(f"lane {lane.id!r} links to unknown lane {succ!r}")
        chain = []
        bounds = _piece_bounds(float(s[-1]), piece_length)
        width = max(3, len(str(len(bounds) - 1)))
        for i, (s0, s1) in enumerate(bounds):
            sub = _cut_polyline(xy, s, s0, s1)
            length = float(polyline_lengths(sub)[-1])
            chain.append((f"{lane.id}:{i:0{width}d}", sub, length))
        chains[lane.id] = chain

    pieces = []
    for lane in lanes:
        chain = chains[lane.id]
        for i, (pid, sub, length) in enumerate(chain):
            if i + 1 < len(chain):
                succ = (chain[i + 1][0],)
            else:
                succ = tuple(chains[s][0][0] for s in lane.successors)
            pieces.append(LanePiece(pid, lane.id, _headed_points(sub), length, succ, lane.speed_limit))
    return LaneGraph(pieces, piece_length)


def locate_pieces(graph: LaneGraph, position, radius: float = DEFAULT_CAPTURE_RADIUS) -> list[str]:
    """Pieces whose centerline passes within ``radius`` of ``position``, nearest first."""
    if len(graph) == 0:
        raise InvalidInputError("empty graph")
    x, y = float(position[0]), float(position[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InvalidInputError("non-finite position")
    dist = graph.distances(x, y)
    hits = [(d, pid) for pid, d in dist.items() if d <= radius]
    return [pid for _, pid in sorted(hits)]


def enumerate_paths(
    graph: LaneGraph,
    start_pieces: Sequence[str],
    horizon_T: float,
    v_max: float,
    start_offset: float = 0.0,
) -> list[TargetPath]:
    """All simple piece sequences reaching the travel budget ``horizon_T * v_max``.

    A sequence stops at the first piece where its cumulative length (minus
    ``start_offset``, the distance already covered inside the start piece)
    reaches the budget, or earlier when no unvisited successor remains.
    """
    if not start_pieces:
        raise InvalidInputError("no start pieces")
    if not (horizon_T > 0 and v_max > 0):
        raise InvalidInputError("horizon_T and v_max must be positive")
    for pid in start_pieces:
        if pid not in graph:
            raise InvalidInputError(f"unknown start piece {pid!r}")
    budget = horizon_T * v_max + start_offset
    found: set[tuple[str, ...]] = set()

    for start in set(start_pieces):
        stack = [((start,), graph[start].length)]
        while stack:
            seq, cum = stack.pop()
            if cum >= budget - 1e-9:
                found.add(seq)
                continue
            nxt = [s for s in graph.successors(seq[-1]) if s not in seq]
            if not nxt:
                found.add(seq)
                continue
            for s in nxt:
                stack.append((seq + (s,), cum + graph[s].length))
    return [graph.path_from_pieces(seq) for seq in sorted(found)]


def astar_pieces(graph: LaneGraph, start: str, goal: str) -> list[str]:
    """Minimum total-length piece sequence from ``start`` to ``goal`` (both included)."""
    for pid in (start, goal):
        if pid not in graph:
            raise InvalidInputError(f"unknown piece {pid!r}")
    gx, gy = graph[goal].start.x, graph[goal].start.y

    def h(pid):
        end = graph[pid].end
        return 0.0 if pid == goal else math.hypot(end.x - gx, end.y - gy)

    g_cost = {start: graph[start].length}
    parent: dict[str, str | None] = {start: None}
    heap = [(g_cost[start] + h(start), start)]
    closed = set()
    while heap:
        _, pid = heapq.heappop(heap)
        if pid in closed:
            continue
        if pid == goal:
            seq = [pid]
            while parent[seq[-1]] is not None:
                seq.append(parent[seq[-1]])
            return seq[::-1]
        closed.add(pid)
        for s in graph.successors(pid):
            cost = g_cost[pid] + graph[s].length
            if cost < g_cost.get(s, math.inf) - 1e-12:
                g_cost[s] = cost
                parent[s] = pid
                heapq.heappush(heap, (cost + h(s), s))
    raise NoRouteError(f"no route from {start!r} to {goal!r}")


def astar_route(graph: LaneGraph, start: str, goal: str) -> tuple[CenterPoint, ...]:
    """Centerline of the shortest route between two pieces."""
    seq = astar_pieces(graph, start, goal)
    return graph.path_from_pieces(seq).concatenated_centerline


_LANE_KEYS = {"id", "polyline", "successors", "speed_limit"}
_MAP_KEYS = {"lanes", "piece_length"}


def parse_map(doc: Mapping) -> tuple[list[LaneSpec], float]:
    """Validate a map document and return its lanes and piece length."""
    if not isinstance(doc, Mapping):
        raise InvalidInputError("map document must be a JSON object")
    unknown = set(doc) - _MAP_KEYS
    if unknown:
        raise InvalidInputError(f"unknown map fields: {sorted(unknown)}")
    if "lanes" not in doc or not isinstance(doc["lanes"], list):
        raise InvalidInputError("map document needs a 'lanes' list")
    lanes = []
    for raw in doc["lanes"]:
        if not isinstance(raw, Mapping):
            raise InvalidInputError("lane entries must be objects")
        unknown = set(raw) - _LANE_KEYS
        if unknown:
            raise InvalidInputError(f"unknown lane fields: {sorted(unknown)}")
        if "id" not in raw or "polyline" not in raw:
            raise InvalidInputError("lane needs 'id' and 'polyline'")
        try:
            points = tuple((float(p[0]), float(p[1])) for p in raw["polyline"])
        except (TypeError, ValueError, IndexError) as exc:
            raise InvalidInputError(f"bad polyline in lane {raw['id']!r}") from exc
        speed = raw.get("speed_limit")
        lanes.append(
            LaneSpec(
                str(raw["id"]),
                points,
                tuple(str(s) for s in raw.get("successors", [])),
                None if speed is None else float(speed),
            )
        )
    piece_length = float(doc.get("piece_length", DEFAULT_PIECE_LENGTH))
    return lanes, piece_length


def load_map(path, piece_length: float | None = None) -> LaneGraph:
    with open(path) as fh:
        doc = json.load(fh)
    lanes, default_length = parse_map(doc)
    return split_lanes(lanes, piece_length or default_length)


def map_to_doc(lanes: Sequence[LaneSpec], piece_length: float = DEFAULT_PIECE_LENGTH) -> dict:
    out = []
    for lane in lanes:
        entry = {"id": lane.id, "polyline": [list(p) for p in lane.points], "successors": list(lane.successors)}
        if lane.speed_limit is not None:
            entry["speed_limit"] = lane.speed_limit
        out.append(entry)
    return {"lanes": out, "piece_length": piece_length}
