"""Command-line front door: simulate | run | evaluate | report."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .analytics import all_report_tables, evaluate_groups, evaluate_states, write_metrics
from .core import ConfigError, PipelineConfig, config_from_dict, load_config, validate_config
from .pipeline import TRANSITIONS_JSONL, GROUPS_CSV, run_pipeline, write_run_outputs
from .simulate import ScenarioError, load_scenario, simulate_scenario
from .trace_io import (
    TraceError,
    read_ground_truth,
    read_group_log,
    read_trace,
    read_transition_records,
    write_ground_truth,
    write_trace,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="storewatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a trace plus ground truth from a scenario")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_sim.add_argument("--config", default=None)
    p_sim.add_argument("--out-trace", required=True)
    p_sim.add_argument("--out-gt", required=True)

    p_run = sub.add_parser("run", help="replay a trace through the pipeline and write logs")
    p_run.add_argument("--trace", required=True)
    p_run.add_argument("--scenario", required=True, help="scenario file supplying the zone")
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--mode", choices=["deterministic", "concurrent"], default="deterministic")
    p_run.add_argument("--out-dir", required=True)
    p_run.add_argument("--dump-transcript", default=None)

    p_eval = sub.add_parser("evaluate", help="score run outputs against ground truth")
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--out-dir", required=True, help="directory holding the run outputs")
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--scenario", default=None, help="scenario supplying config overrides")

    p_rep = sub.add_parser("report", help="write every report table from run outputs")
    p_rep.add_argument("--out-dir", required=True, help="directory holding the run outputs")
    p_rep.add_argument("--config", default=None)
    p_rep.add_argument("--scenario", default=None, help="scenario supplying the zone for positions")

    return parser


def _resolve_config(config_path: str | None, scenario=None) -> PipelineConfig:
    cfg = PipelineConfig()
    if scenario is not None and scenario.config_overrides:
        cfg = config_from_dict(scenario.config_overrides, base=cfg)
    if config_path is not None:
        cfg = load_config(config_path, base=cfg)
    return validate_config(cfg)


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    cfg = _resolve_config(args.config, scenario)
    frames, events, groups = simulate_scenario(scenario, cfg, seed=args.seed)
    write_trace(frames, args.out_trace)
    write_ground_truth(events, groups, args.out_gt)
    print(f"simulate: {len(frames)} frames, {len(events)} events, {len(groups)} groups")
    return 0


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    cfg = _resolve_config(args.config, scenario)
    zone = scenario.zone.make_zone(cfg)
    frames = read_trace(args.trace)
    result = run_pipeline(
        frames,
        cfg,
        zone,
        mode=args.mode,
        trace_name=args.trace,
        transcript_path=args.dump_transcript,
    )
    write_run_outputs(result, args.out_dir)
    print(
        f"run: {result.report.frames} frames, {len(result.transitions)} transitions, "
        f"{len(result.groups)} group entries -> {args.out_dir}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    scenario = load_scenario(args.scenario) if args.scenario else None
    cfg = _resolve_config(args.config, scenario)
    out_dir = Path(args.out_dir)
    transitions = read_transition_records(out_dir / TRANSITIONS_JSONL)
    group_log = read_group_log(out_dir / GROUPS_CSV)
    events, truth_groups = read_ground_truth(args.gt)
    states = evaluate_states(transitions, events, cfg)
    groups = evaluate_groups(group_log, truth_groups, cfg)
    metrics_path = out_dir / "metrics.json"
    write_metrics(states, groups, metrics_path)
    for letter in ("A", "P", "L"):
        m = states[letter]
        print(f"evaluate {letter}: tp={m.tp} fp={m.fp} fn={m.fn} precision={m.precision} recall={m.recall}")
    gm = groups.metrics
    print(
        f"evaluate groups: tp={gm.tp} fp={gm.fp} fn={gm.fn} precision={gm.precision} "
        f"recall={gm.recall} type_accuracy={groups.type_accuracy}"
    )
    print(f"evaluate: wrote {metrics_path}")
    return 0


def _cmd_report(args) -> int:
    scenario = load_scenario(args.scenario) if args.scenario else None
    cfg = _resolve_config(args.config, scenario)
    zone = scenario.zone.make_zone(cfg) if scenario else None
    out_dir = Path(args.out_dir)
    transitions = read_transition_records(out_dir / TRANSITIONS_JSONL)
    group_log = read_group_log(out_dir / GROUPS_CSV)
    for table in all_report_tables(transitions, group_log, cfg, zone):
        table.to_csv(out_dir / f"{table.name}.csv")
    print(f"report: wrote 8 tables to {out_dir}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "run": _cmd_run,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("STOREWATCH_LOG", "WARNING").upper())
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ScenarioError, TraceError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: FileNotFoundError: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
