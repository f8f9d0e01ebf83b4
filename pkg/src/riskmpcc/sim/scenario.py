"""Scenario configuration loaded from JSON with strict validation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..errors import InvalidInputError
from ..lane_graph import parse_map

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "data"

_TOP_KEYS = {"name", "map", "dt", "max_duration", "seed", "ignore_probability", "ego", "agents",
             "conflict_region", "history_duration", "description"}
_EGO_KEYS = {"start_lane", "goal_lane", "spawn_s", "spawn_speed", "goal_s", "limits", "planner", "predictor",
             "risk", "replan_every"}
_AGENT_KEYS = {"id", "lanes", "spawn_s", "speed", "idm", "jitter", "ignore"}


def _check_keys(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise InvalidInputError(f"{where} must be an object")
    unknown = set(d) - allowed
    if unknown:
        raise InvalidInputError(f"unknown fields in {where}: {sorted(unknown)}")


@dataclass
class EgoConfig:
    start_lane: str
    goal_lane: str
    spawn_s: float = 0.0
    spawn_speed: float = 0.0
    goal_s: float = 30.0
    limits: dict = field(default_factory=dict)
    planner: dict = field(default_factory=dict)
    predictor: dict = field(default_factory=lambda: {"name": "target_region"})
    risk: dict = field(default_factory=dict)
    replan_every: int = 1


@dataclass
class AgentConfig:
    id: str
    lanes: list
    spawn_s: float = 0.0
    speed: float = 8.0
    idm: dict = field(default_factory=dict)
    # uniform half-widths for per-seed perturbation of spawn_s, speed, desired_speed, lateral_accel
    jitter: dict = field(default_factory=dict)
    # force the ignore trait instead of sampling it
    ignore: bool | None = None


@dataclass
class ScenarioConfig:
    name: str
    map: dict
    ego: EgoConfig
    agents: list = field(default_factory=list)
    dt: float = 0.05
    max_duration: float = 30.0
    seed: int = 0
    ignore_probability: float = 0.5
    conflict_region: dict | None = None
    history_duration: float = 2.0
    description: str = ""

    def with_overrides(self, **changes) -> "ScenarioConfig":
        d = self.to_dict()
        for key, value in changes.items():
            target = d
            parts = key.split(".")
            for p in parts[:-1]:
                target = target.setdefault(p, {})
            target[parts[-1]] = value
        return parse_scenario(d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps({
            "name": self.name, "map": self.map, "dt": self.dt, "max_duration": self.max_duration,
            "seed": self.seed, "ignore_probability": self.ignore_probability,
            "ego": self.ego.__dict__, "agents": [a.__dict__ for a in self.agents],
            "conflict_region": self.conflict_region, "history_duration": self.history_duration,
            "description": self.description,
        }))


def parse_scenario(doc: dict[str, Any], base_dir: Path | None = None) -> ScenarioConfig:
    _check_keys(doc, _TOP_KEYS, "scenario")
    for key in ("name", "map", "ego"):
        if key not in doc:
            raise InvalidInputError(f"scenario is missing {key!r}")
    map_doc = doc["map"]
    if isinstance(map_doc, str):
        map_path = Path(map_doc)
        if not map_path.is_absolute():
            map_path = (base_dir or SCENARIO_DIR) / map_path
        if not map_path.exists():
            raise InvalidInputError(f"map file not found: {map_path}")
        with open(map_path) as fh:
            map_doc = json.load(fh)
    lanes, _ = parse_map(map_doc)
    lane_ids = {lane.id for lane in lanes}

    _check_keys(doc["ego"], _EGO_KEYS, "ego")
    ego = EgoConfig(**doc["ego"])
    for lane in (ego.start_lane, ego.goal_lane):
        if lane not in lane_ids:
            raise InvalidInputError(f"ego references unknown lane {lane!r}")
    agents = []
    for raw in doc.get("agents", []):
        _check_keys(raw, _AGENT_KEYS, "agent")
        agent = AgentConfig(**raw)
        if not agent.lanes or any(l not in lane_ids for l in agent.lanes):
            raise InvalidInputError(f"agent {agent.id!r} has an invalid lane list")
        agents.append(agent)
    cfg = ScenarioConfig(
        name=doc["name"], map=map_doc, ego=ego, agents=agents,
        dt=float(doc.get("dt", 0.05)), max_duration=float(doc.get("max_duration", 30.0)),
        seed=int(doc.get("seed", 0)), ignore_probability=float(doc.get("ignore_probability", 0.5)),
        conflict_region=doc.get("conflict_region"), history_duration=float(doc.get("history_duration", 2.0)),
        description=doc.get("description", ""),
    )
    if not 0.0 <= cfg.ignore_probability <= 1.0:
        raise InvalidInputError("ignore_probability must lie in [0, 1]")
    if not (cfg.dt > 0 and cfg.max_duration > 0):
        raise InvalidInputError("dt and max_duration must be positive")
    return cfg


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        builtin = SCENARIO_DIR / f"{path.name}.json" if path.suffix == "" else SCENARIO_DIR / path.name
        if builtin.exists():
            path = builtin
        else:
            raise InvalidInputError(f"scenario file not found: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"invalid JSON in {path}: {exc}") from exc
    return parse_scenario(doc, path.parent)


def builtin_scenario(name: str) -> ScenarioConfig:
    return load_scenario(SCENARIO_DIR / f"{name}.json")
