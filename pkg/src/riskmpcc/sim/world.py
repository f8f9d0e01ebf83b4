"""Synchronous world stepping and the closed planning loop."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from ..dynamics import ControlInput, VehicleLimits, VehicleState, integrate
from ..lane_graph import LaneGraph, astar_pieces, parse_map, split_lanes
from ..mpcc import MPCCPlanner, PlannerConfig, PlannerSolution, PlannerWeights
from ..prediction import HistoryTrack, make_predictor
from ..reference_path import ReferencePath, from_polyline
from ..risk_field import RiskFieldParams, build
from .agents import Agent, IDMParams, RoutePolyline
from .collision import collision_check
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

EGO = "ego"


@dataclass(frozen=True)
class SimState:
    step_index: int
    dt: float
    vehicles: dict
    footprints: dict
    events: tuple = ()
    terminal: bool = False

    @property
    def time(self) -> float:
        return self.step_index * self.dt


def _route_points(lanes_by_id: dict, lane_ids) -> list:
    pts: list = []
    for lid in lane_ids:
        for p in lanes_by_id[lid].points:
            if pts and math.hypot(p[0] - pts[-1][0], p[1] - pts[-1][1]) < 1e-6:
                continue
            pts.append(p)
    return pts


@dataclass
class EgoSetup:
    path: ReferencePath
    goal_s: float
    limits: VehicleLimits
    planner: MPCCPlanner
    predictor: object
    risk_params: RiskFieldParams
    replan_every: int


class Simulation:
    """One seeded world holding the ego and its scripted agents."""

    def __init__(self, config: ScenarioConfig, seed: int | None = None):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        lanes, piece_length = parse_map(config.map)
        self.lanes = {lane.id: lane for lane in lanes}
        self.graph: LaneGraph = split_lanes(lanes, piece_length)
        self.dt = config.dt
        self.ego = self._build_ego()
        self.agents = self._build_agents()
        x, y, phi = self.ego.path.sample(config.ego.spawn_s)
        ego_state = VehicleState(x, y, phi, 0.0, config.ego.spawn_speed)
        vehicles = {EGO: ego_state}
        footprints = {EGO: (self.ego.limits.half_length, self.ego.limits.half_width)}
        for a in self.agents:
            vehicles[a.id] = a.state
            footprints[a.id] = (a.limits.half_length, a.limits.half_width)
        self.state = SimState(0, self.dt, vehicles, footprints)
        self.history = {vid: deque(maxlen=max(1, int(round(config.history_duration / self.dt))) + 1) for vid in vehicles}
        self.ego_s = self.ego.path.project(ego_state.x, ego_state.y)
        self._record_history()

    def _build_ego(self) -> EgoSetup:
        e = self.config.ego
        start = self.graph.lane_pieces(e.start_lane)[0]
        goal = self.graph.lane_pieces(e.goal_lane)[-1]
        seq = astar_pieces(self.graph, start, goal)
        points = [(p.x, p.y) for p in self.graph.path_from_pieces(seq).concatenated_centerline]
        path = from_polyline(points)
        limits = VehicleLimits(**e.limits)
        pcfg = dict(e.planner)
        weights = PlannerWeights.from_dict(pcfg.get("weights", {}))
        planner = MPCCPlanner(weights, limits, PlannerConfig.from_dict(pcfg.get("config", {})))
        pred = dict(e.predictor)
        name = pred.pop("name", "target_region")
        predictor = make_predictor(name, **pred)
        risk = RiskFieldParams(**{"gamma": weights.gamma, **e.risk})
        return EgoSetup(path, e.goal_s, limits, planner, predictor, risk, max(1, int(e.replan_every)))

    def _build_agents(self) -> list:
        agents = []
        for ac in self.config.agents:
            jit = ac.jitter
            draw = lambda key: float(self.rng.uniform(-jit.get(key, 0.0), jit.get(key, 0.0)))
            ignore_draw = float(self.rng.uniform())
            d_spawn, d_speed, d_des, d_lat = draw("spawn_s"), draw("speed"), draw("desired_speed"), draw("lateral_accel")
            ignores = ac.ignore if ac.ignore is not None else ignore_draw < self.config.ignore_probability
            route = RoutePolyline(_route_points(self.lanes, ac.lanes))
            idm = IDMParams(**ac.idm)
            idm = replace(idm, desired_speed=max(0.5, idm.desired_speed + d_des),
                          lateral_accel=max(0.5, idm.lateral_accel + d_lat))
            s0 = min(max(ac.spawn_s + d_spawn, 0.0), route.length - 1.0)
            x, y = route.point(s0)
            state = VehicleState(x, y, route.heading_at(s0), 0.0, max(0.0, ac.speed + d_speed))
            agents.append(Agent(ac.id, route, state, idm, ignores, s=s0, lanes=tuple(ac.lanes)))
        return agents

    # -- world stepping -------------------------------------------------------
    def _record_history(self):
        t = self.state.time
        for vid, st in self.state.vehicles.items():
            h = self.history[vid]
            a = w = 0.0
            if h:
                prev = h[-1]
                a = (st.v - prev[4]) / self.dt
                w = math.remainder(st.phi - prev[3], 2 * math.pi) / self.dt
            h.append((t, st.x, st.y, st.phi, st.v, a, w))

    def history_track(self, vid: str) -> HistoryTrack:
        return HistoryTrack(np.array(self.history[vid]))

    def step(self, ego_input: ControlInput) -> SimState:
        """Advance every vehicle by one fixed step and check ego collisions."""
        if self.state.terminal:
            return self.state
        dt = self.dt
        ego_state = self.state.vehicles[EGO]
        hl = {vid: fp[0] for vid, fp in self.state.footprints.items()}
        snapshot = [(vid, st.x, st.y, st.v) for vid, st in self.state.vehicles.items()]
        for agent in self.agents:
            others = [(x, y, v, hl[vid]) for vid, x, y, v in snapshot
                      if vid != agent.id and (vid == EGO or self._active(vid))]
            agent.step(others, dt, agent.limits.half_length)
        new_ego, _ = integrate(ego_state, ego_input.clipped(self.ego.limits), self.ego.limits, dt)

        vehicles = {EGO: new_ego}
        for agent in self.agents:
            vehicles[agent.id] = agent.state
        events = list(self.state.events)
        t_next = (self.state.step_index + 1) * dt
        ego_fp = self.state.footprints[EGO]
        for agent in self.agents:
            if not agent.active:
                continue
            st = agent.state
            if collision_check((new_ego.x, new_ego.y, new_ego.phi), ego_fp, (st.x, st.y, st.phi),
                               self.state.footprints[agent.id]):
                events.append({"type": "collision", "time": t_next, "with": agent.id})
        self.ego_s = self.ego.path.project(new_ego.x, new_ego.y, self.ego_s, 10.0)
        terminal = False
        if any(e["type"] == "collision" for e in events):
            terminal = True
        elif self.ego_s >= self.ego.goal_s:
            events.append({"type": "goal-reached", "time": t_next})
            terminal = True
        elif t_next >= self.config.max_duration - 1e-9:
            events.append({"type": "timeout", "time": t_next})
            terminal = True
        self.state = SimState(self.state.step_index + 1, dt, vehicles, self.state.footprints, tuple(events), terminal)
        self._record_history()
        return self.state

    def _active(self, vid: str) -> bool:
        for a in self.agents:
            if a.id == vid:
                return a.active
        return True

    def active_agents(self) -> list:
        return [a for a in self.agents if a.active]


def step(sim: Simulation, ego_input: ControlInput) -> SimState:
    return sim.step(ego_input)


@dataclass
class RunResult:
    seed: int
    collision: bool
    goal_reached: bool
    timeout: bool
    scenario_time: float
    distance: float
    avg_speed: float
    min_speed: float
    yield_event: bool = False
    proceed_first_event: bool = False
    planner_failures: int = 0
    trace_hash: str = ""
    trace: list = field(default_factory=list, repr=False)
    snapshots: list = field(default_factory=list, repr=False)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in (
            "seed", "collision", "goal_reached", "timeout", "scenario_time", "distance", "avg_speed",
            "min_speed", "yield_event", "proceed_first_event", "planner_failures", "trace_hash")}


class ConflictMonitor:
    """Tracks who occupies the conflict region and when."""

    def __init__(self, region: dict | None, window: float = 4.0):
        self.region = region
        self.window = window
        self.ego_enter = None
        self.ego_exit = None
        self.agent_enter: dict = {}
        self.ego_exit_speed = 0.0
        self.ego_slow = None
        self.yield_event = False

    def _inside(self, st) -> bool:
        cx, cy = self.region["center"]
        return math.hypot(st.x - cx, st.y - cy) <= self.region["radius"]

    def update(self, t: float, vehicles: dict, active: set):
        if self.region is None:
            return
        ego = vehicles[EGO]
        ego_in = self._inside(ego)
        if ego_in and self.ego_enter is None:
            self.ego_enter = t
        if not ego_in and self.ego_enter is not None and self.ego_exit is None:
            self.ego_exit = t
            self.ego_exit_speed = ego.v
        if ego.v < 1.0 and self.ego_enter is None and self.ego_slow is None:
            self.ego_slow = t
        for vid, st in vehicles.items():
            if vid == EGO or vid not in active:
                continue
            if self._inside(st) and vid not in self.agent_enter:
                self.agent_enter[vid] = (t, st.v)
                # waiting (nearly stopped) ego lets this agent cross first
                if self.ego_enter is None and self.ego_slow is not None and t - self.ego_slow <= self.window:
                    self.yield_event = True

    @property
    def proceed_first(self) -> bool:
        if self.ego_exit is None:
            return False
        # a slower agent reaching the region shortly after the ego has left it
        return any(self.ego_exit < t_a <= self.ego_exit + self.window and v_a < self.ego_exit_speed
                   for t_a, v_a in self.agent_enter.values())


def _round(v: float) -> float:
    return float(f"{v:.12g}")


def run_single(config: ScenarioConfig, seed: int, keep_trace: bool = True, snapshot_every: int = 0) -> RunResult:
    """Closed loop: predict, build the risk field, solve, apply the first input, step."""
    sim = Simulation(config, seed)
    ego = sim.ego
    planner = ego.planner
    n = planner.config.horizon
    monitor = ConflictMonitor(config.conflict_region)
    digest = hashlib.sha256()
    trace = []
    snapshots = []
    solution: PlannerSolution | None = None
    offset = None
    current_field = None
    last_input = ControlInput(0.0, 0.0)
    failures = 0
    distance = 0.0
    speeds = [sim.state.vehicles[EGO].v]
    monitor.update(0.0, sim.state.vehicles, {a.id for a in sim.active_agents()})

    while not sim.state.terminal:
        k = sim.state.step_index
        ego_state = sim.state.vehicles[EGO]
        predictions = []
        field_info = {}
        if k % ego.replan_every == 0 or solution is None:
            try:
                relevant = [a for a in sim.active_agents()
                            if math.hypot(a.state.x - ego_state.x, a.state.y - ego_state.y) < 80.0]
                predictions = [ego.predictor(sim.history_track(a.id), sim.graph) for a in relevant]
                field = build(predictions, ego.risk_params, n + 1, planner.config.dt)
                current_field = field
                warm = planner.warm_start_shift(solution, ego.path) if solution is not None else None
                solution = planner.solve(ego_state, ego.path, field, warm)
                offset = 0
                field_info = {"n_kernels": field.n_kernels}
            except Exception as exc:  # planner failure: hold the previous input
                failures += 1
                log.warning("planner failure at step %d: %s", k, exc)
                solution = None
                offset = None
        else:
            offset = (offset or 0) + 1
        if solution is not None and offset is not None and offset < solution.horizon:
            dd, a, _ = solution.inputs[offset]
            last_input = ControlInput(float(dd), float(a))
        prev = sim.state.vehicles[EGO]
        state = sim.step(last_input)
        cur = state.vehicles[EGO]
        distance += math.hypot(cur.x - prev.x, cur.y - prev.y)
        speeds.append(cur.v)
        monitor.update(state.time, state.vehicles, {a.id for a in sim.active_agents()})

        record = {
            "t": _round(state.time),
            "vehicles": {vid: [_round(v) for v in (s.x, s.y, s.phi, s.delta, s.v)] for vid, s in state.vehicles.items()},
            "input": [_round(last_input.delta_rate), _round(last_input.accel)],
        }
        if solution is not None:
            record["planner"] = {"status": solution.solver_status, "iterations": solution.iterations,
                                 "objective": _round(solution.objective)}
        if field_info:
            record["risk"] = field_info
        line = json.dumps(record, sort_keys=True)
        digest.update(line.encode())
        if keep_trace:
            trace.append(record)
        if snapshot_every and k % snapshot_every == 0:
            snapshots.append({"t": state.time, "vehicles": dict(state.vehicles), "predictions": predictions,
                              "field": current_field, "footprints": dict(state.footprints),
                              "plan": None if solution is None else solution.states[:, :2].copy()})

    events = sim.state.events
    collision = any(e["type"] == "collision" for e in events)
    goal = any(e["type"] == "goal-reached" for e in events)
    timeout = any(e["type"] == "timeout" for e in events)
    t_end = sim.state.time
    avg = distance / t_end if t_end > 0 else 0.0
    return RunResult(seed, collision, goal, timeout, t_end, distance, avg, float(min(speeds)),
                     monitor.yield_event, monitor.proceed_first, failures, digest.hexdigest(), trace, snapshots)
