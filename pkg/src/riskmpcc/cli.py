"""Command line entry point: ``riskmpcc run | train-toy | report``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import InvalidInputError, TrainingDivergedError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
log = logging.getLogger("riskmpcc")


@dataclass
class RunManifest:
    config: Path
    seeds: range
    out: Path
    trace: bool = True
    metrics: bool = True
    svg_every: int = 0
    predictor: str | None = None

    def __post_init__(self):
        if len(self.seeds) == 0:
            raise InvalidInputError("seed range is empty")
        if self.svg_every < 0:
            raise InvalidInputError("--svg-every must be >= 0")


def parse_seeds(text: str) -> range:
    """``7`` or ``a..b`` (inclusive)."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError as exc:
        raise InvalidInputError(f"bad seed range {text!r}; use N or A..B") from exc
    if hi < lo:
        raise InvalidInputError(f"empty seed range {text!r}")
    return range(lo, hi + 1)


class _Artifacts:
    """Remembers what a command wrote so a failure can take it back."""

    def __init__(self, out: Path):
        self.out = out
        self.created_dir = not out.exists()
        self.paths: list[Path] = []

    def prepare(self):
        self.out.mkdir(parents=True, exist_ok=True)

    def add(self, path: Path) -> Path:
        self.paths.append(path)
        return path

    def rollback(self):
        for p in reversed(self.paths):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()
        if self.created_dir and self.out.exists() and not any(self.out.iterdir()):
            self.out.rmdir()


def cmd_run(m: RunManifest) -> int:
    from .sim.metrics import MetricsReport, predictor_name
    from .sim.scenario import load_scenario
    from .sim.trace import write_trace
    from .sim.world import run_single
    from .svg import write_snapshots

    config = load_scenario(m.config)
    if m.predictor:
        config = config.with_overrides(**{"ego.predictor": {**config.ego.predictor, "name": m.predictor}})
    # build the world once so bad planner/predictor options fail as configuration errors
    from .sim.world import Simulation
    Simulation(config, m.seeds[0])

    art = _Artifacts(m.out)
    art.prepare()
    try:
        report = MetricsReport(config.name, predictor_name(config))
        for seed in m.seeds:
            res = run_single(config, seed, keep_trace=m.trace, snapshot_every=m.svg_every)
            report.rows.append(res.row())
            if m.trace:
                write_trace(art.add(m.out / f"trace_{config.name}_seed{seed}.jsonl"), res.trace)
            if m.svg_every:
                write_snapshots(res.snapshots, config.map, art.add(m.out / f"svg_seed{seed}"))
            log.info("seed %d: collision=%s goal=%s time=%.2f", seed, res.collision, res.goal_reached,
                     res.scenario_time)
        if m.metrics:
            report.write_csv(art.add(m.out / "metrics.csv"))
    except BaseException:
        art.rollback()
        raise
    s = report.summary()
    print(f"{s['scenario']} / {s['predictor']}: {s['runs']} runs, collision rate {s['collision_rate']:.2%}, "
          f"mean time {s['time']:.2f} s, mean speed {s['avg_speed']:.2f} m/s")
    return EXIT_OK


@dataclass
class ToyTrainingConfig:
    generator: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    dims: dict = field(default_factory=dict)
    init_seed: int = 0
    holdout: float = 0.25

    @classmethod
    def load(cls, path) -> "ToyTrainingConfig":
        if path is None:
            return cls()
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read training config {path}: {exc}") from exc
        unknown = set(doc) - {"generator", "train", "dims", "init_seed", "holdout"}
        if unknown:
            raise InvalidInputError(f"unknown fields in training config: {sorted(unknown)}")
        return cls(**doc)


def cmd_train_toy(config_path, out: Path) -> int:
    from .trtp.data import GeneratorConfig, generate, split
    from .trtp.network import Dims, NetParams, TrainConfig, dataset_loss, save_checkpoint, train_toy

    cfg = ToyTrainingConfig.load(config_path)
    try:
        gen = GeneratorConfig(**cfg.generator)
        tcfg = TrainConfig(**cfg.train)
        dims = Dims(**{"horizon": gen.horizon_steps, **cfg.dims})
    except TypeError as exc:
        raise InvalidInputError(str(exc)) from exc
    if dims.horizon != gen.horizon_steps:
        raise InvalidInputError("dims.horizon must equal generator.horizon_steps")
    if tcfg.steps < 0 or tcfg.learning_rate < 0:
        raise InvalidInputError("steps and learning_rate must be non-negative")
    samples = generate(gen)
    train_set, held_out = split(samples, cfg.holdout)
    params = NetParams.init(dims, cfg.init_seed)

    art = _Artifacts(out)
    art.prepare()
    try:
        trained, curve = train_toy(train_set, params, tcfg)
        save_checkpoint(trained, art.add(out / "checkpoint.json"))
        with open(art.add(out / "loss_curve.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "batch_loss", "smoothed"])
            ema = None
            for i, val in enumerate(curve):
                ema = val if ema is None else 0.9 * ema + 0.1 * val
                w.writerow([i, repr(val), repr(ema)])
        eval_set = held_out or train_set
        summary = {"train_samples": len(train_set), "heldout_samples": len(held_out),
                   "heldout_loss_before": dataset_loss(params, eval_set, tcfg.alpha, tcfg.beta),
                   "heldout_loss_after": dataset_loss(trained, eval_set, tcfg.alpha, tcfg.beta),
                   "train": asdict(tcfg), "dims": asdict(dims)}
        (art.add(out / "train_summary.json")).write_text(json.dumps(summary, indent=1))
    except BaseException:
        art.rollback()
        raise
    print(f"held-out loss {summary['heldout_loss_before']:.4f} -> {summary['heldout_loss_after']:.4f}; "
          f"checkpoint in {out / 'checkpoint.json'}")
    return EXIT_OK


def cmd_report(metrics_path) -> int:
    from .sim.metrics import format_table, read_csv

    print(format_table(read_csv(metrics_path)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riskmpcc", description="Risk-aware MPCC planning in a desk-scale traffic simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario over a seed range")
    run.add_argument("--config", required=True, help="scenario JSON, or a built-in name (merging, left_turn)")
    run.add_argument("--seeds", default="0", help="N or A..B (inclusive)")
    run.add_argument("--out", required=True)
    run.add_argument("--svg-every", type=int, default=0, metavar="N", help="write an SVG snapshot every N steps")
    run.add_argument("--predictor", default=None, help="override the ego predictor (csp, target_region, trtp_toy)")
    run.add_argument("--no-trace", action="store_true")

    tr = sub.add_parser("train-toy", help="train the toy TRTP network on synthetic data")
    tr.add_argument("--config", default=None)
    tr.add_argument("--out", required=True)

    rep = sub.add_parser("report", help="summarize a metrics CSV")
    rep.add_argument("--metrics", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            manifest = RunManifest(Path(args.config), parse_seeds(args.seeds), Path(args.out),
                                   trace=not args.no_trace, svg_every=args.svg_every, predictor=args.predictor)
            return cmd_run(manifest)
        if args.command == "train-toy":
            return cmd_train_toy(args.config, Path(args.out))
        return cmd_report(args.metrics)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - the exit code contract covers every other failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
