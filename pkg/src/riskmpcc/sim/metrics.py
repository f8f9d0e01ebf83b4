"""Seed batches and their summary table."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

from ..errors import InvalidInputError
from .scenario import ScenarioConfig
from .world import RunResult, run_single

log = logging.getLogger(__name__)

COLUMNS = ("seed", "collision", "goal_reached", "timeout", "scenario_time", "distance", "avg_speed",
           "min_speed", "yield_event", "proceed_first_event", "planner_failures", "trace_hash")
_BOOL = {"collision", "goal_reached", "timeout", "yield_event", "proceed_first_event"}
_INT = {"seed", "planner_failures"}


@dataclass
class MetricsReport:
    scenario: str
    predictor: str
    rows: list = field(default_factory=list)

    @property
    def collision_rate(self) -> float:
        return sum(r["collision"] for r in self.rows) / len(self.rows) if self.rows else 0.0

    def mean(self, key: str, only_safe: bool = True) -> float:
        vals = [r[key] for r in self.rows if not (only_safe and r["collision"])]
        return sum(vals) / len(vals) if vals else float("nan")

    def summary(self) -> dict:
        return {
            "scenario": self.scenario,
            "predictor": self.predictor,
            "runs": len(self.rows),
            "time": self.mean("scenario_time"),
            "avg_speed": self.mean("avg_speed"),
            "collision_rate": self.collision_rate,
            "yields": sum(r["yield_event"] for r in self.rows),
            "proceed_first": sum(r["proceed_first_event"] for r in self.rows),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=("scenario", "predictor") + COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({"scenario": self.scenario, "predictor": self.predictor, **r})


def read_csv(path) -> list[MetricsReport]:
    """One report per (scenario, predictor) pair found in the file."""
    reports: dict = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise InvalidInputError(f"metrics file lacks columns {sorted(missing)}")
            for raw in reader:
                row = {}
                for k in COLUMNS:
                    v = raw[k]
                    row[k] = v == "True" if k in _BOOL else int(v) if k in _INT else v if k == "trace_hash" else float(v)
                key = (raw["scenario"], raw["predictor"])
                reports.setdefault(key, MetricsReport(*key)).rows.append(row)
    except OSError as exc:
        raise InvalidInputError(f"cannot read metrics file {path}: {exc}") from exc
    return list(reports.values())


def predictor_name(config: ScenarioConfig) -> str:
    return str(config.ego.predictor.get("name", "target_region"))


def run_scenario(config: ScenarioConfig, repeats: int, on_result=None, **run_kwargs) -> MetricsReport:
    """Run seeds config.seed .. config.seed + repeats - 1 and collect their rows."""
    if repeats < 1:
        raise InvalidInputError("repeats must be at least 1")
    report = MetricsReport(config.name, predictor_name(config))
    for seed in range(config.seed, config.seed + repeats):
        result: RunResult = run_single(config, seed, **run_kwargs)
        if result.planner_failures:
            log.info("seed %d: %d planner failures", seed, result.planner_failures)
        report.rows.append(result.row())
        if on_result is not None:
            on_result(result)
    return report


def format_table(reports) -> str:
    lines = [f"{'scenario':<12} {'predictor':<14} {'runs':>5} {'Time [s]':>9} {'Avg Spd [m/s]':>14} {'Col Rate':>9}"]
    for rep in reports:
        s = rep.summary()
        lines.append(f"{s['scenario']:<12} {s['predictor']:<14} {s['runs']:>5} {s['time']:>9.2f} "
                     f"{s['avg_speed']:>14.2f} {100 * s['collision_rate']:>8.1f}%")
    return "\n".join(lines)
