"""Command-line entry point: ``agentstab {calibrate,run,ablate,report}``.

Exit codes: 0 success, 2 usage or config error, 3 contract violation,
4 calibration failure, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .errors import AgentStabError, ConfigError
from .formats import (
    emit_calibration,
    emit_episode_csv,
    emit_manifest,
    emit_summary,
    load_calibration,
    parse_config,
    plan_from_dict,
    read_manifest,
    summaries_from_traces,
    trace_path,
)
from .harness import Calibration, ExperimentPlan, run_calibration, run_condition

log = logging.getLogger("agentstab")

ENV_SEED = "AGENTSTAB_SEED"
ENV_OUT = "AGENTSTAB_OUT"
DEFAULT_OUT = "runs"
EXIT_IO = 5


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agentstab", description="Runtime stability experiments for agent loops.")
    p.add_argument("command", choices=("calibrate", "run", "ablate", "report"))
    p.add_argument("--config", help="JSON config file (missing fields take defaults)")
    p.add_argument("--seed", type=int, help=f"master seed (env {ENV_SEED})")
    p.add_argument("--out", help=f"output directory (env {ENV_OUT}, default '{DEFAULT_OUT}')")
    p.add_argument("--condition", help="condition name for 'run' (default full_controller)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (output is identical for any value)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args) -> tuple[ExperimentPlan, Path]:
    plan = parse_config(args.config)
    seed = args.seed
    if seed is None and os.environ.get(ENV_SEED):
        try:
            seed = int(os.environ[ENV_SEED])
        except ValueError as exc:
            raise ConfigError(f"not an integer: {os.environ[ENV_SEED]!r}", ENV_SEED) from exc
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("must be an unsigned 64-bit integer", "seed")
        plan = replace(plan, master_seed=seed)
    if args.jobs < 1:
        raise ConfigError("must be >= 1", "jobs")
    plan = replace(plan, jobs=args.jobs)
    out = Path(args.out or os.environ.get(ENV_OUT) or DEFAULT_OUT)
    return plan, out


def _calibrations(plan: ExperimentPlan, out: Path, names: Sequence[str]) -> dict[str, Calibration]:
    """Reuse persisted calibrations fitted for this exact config; fit the rest."""
    known = {c.name for c in plan.conditions}
    for name in names:
        if name not in known:
            raise ConfigError(f"unknown condition {name!r}; known: {sorted(known)}", "condition")
    cmap = load_calibration(out / "calibration.json", plan) or {}
    by_gain: dict[tuple, Calibration] = {}
    for name in names:
        cond = plan.condition(name)
        variant = cond.variant(plan.sim, plan.recovery)
        key = (cond.kind, variant.gain)
        if name in cmap and cmap[name].gain == variant.gain:
            by_gain.setdefault(key, cmap[name])
            continue
        if key not in by_gain:
            log.info("calibrating %s", name)
            by_gain[key] = run_calibration(plan, variant)
        cmap[name] = by_gain[key]
    emit_calibration(out, plan, cmap)
    return cmap


def _run_conditions(plan: ExperimentPlan, out: Path, names: Sequence[str], command: str) -> None:
    cmap = _calibrations(plan, out, names)
    summaries, paths = [], ["calibration.json"]
    for name in names:
        cond = plan.condition(name)
        log.info("running %s (N=%d)", name, plan.N)
        summary = run_condition(plan, cond, cmap[name], keep_traces=True)
        for stale in sorted((out / "traces" / name).glob("ep_*.csv")):
            stale.unlink()
        for i, tr in enumerate(summary.traces):
            emit_episode_csv(tr, trace_path(out, name, i))
        paths.append(f"traces/{name}/")
        summary.traces = []
        summaries.append(summary)
    paths += emit_summary(summaries, out)
    emit_manifest(out, plan, command, paths)
    for s in summaries:
        rec = "--" if s.recovery_rate is None else f"{s.recovery_rate:.2f}"
        mttr = "--" if s.mttr_mean is None else f"{s.mttr_mean:.2f} ± {s.mttr_std:.2f}"
        print(f"{s.name:22s} det={s.detection_rate:.2f} rec={rec} mttr={mttr}")


def cmd_calibrate(plan: ExperimentPlan, out: Path, args) -> None:
    names = [args.condition] if args.condition else [c.name for c in plan.conditions]
    cmap = _calibrations(plan, out, names)
    emit_manifest(out, plan, "calibrate", ["calibration.json"])
    for name in names:
        th = cmap[name].thresholds
        print(f"{name:22s} S={cmap[name].scale.S:.6g} tau={th.tau:.6g} tau_d={th.tau_d:.6g}")


def cmd_run(plan: ExperimentPlan, out: Path, args) -> None:
    _run_conditions(plan, out, [args.condition or "full_controller"], "run")


def cmd_ablate(plan: ExperimentPlan, out: Path, args) -> None:
    _run_conditions(plan, out, [c.name for c in plan.conditions], "ablate")


def cmd_report(plan: ExperimentPlan, out: Path, args) -> None:
    """Rebuild summaries from the traces and config recorded under ``out``."""
    manifest = read_manifest(out)
    stored = plan_from_dict(manifest["config"])
    summaries = summaries_from_traces(out, stored)
    if not summaries:
        raise ConfigError(f"no traces found under {out / 'traces'}")
    emit_summary(summaries, out)
    for s in summaries:
        print(f"{s.name:22s} det={s.detection_rate:.2f} n={s.n}")


COMMANDS = {"calibrate": cmd_calibrate, "run": cmd_run, "ablate": cmd_ablate, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        plan, out = _resolve(args)
        COMMANDS[args.command](plan, out, args)
    except AgentStabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
