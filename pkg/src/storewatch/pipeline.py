"""End-to-end pipeline assembly: trace frames in, logs and a manifest out."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .bus import MessageBus, RunReport, run_graph
from .core import ItemZone, PipelineConfig, config_to_dict, validate_config
from .detectors import ApproachNode, InteractNode, LeaveNode, PickNode
from .nodes import BaseLayerNode
from .states import UnifiedLogNode
from .trace_io import (
    GroupLogEntry,
    TraceFrame,
    TransitionLogEntry,
    write_group_log,
    write_transition_log,
    write_transition_records,
)

# Topic ranks follow the layer direction so in-frame delivery order is total.
TOPIC_RANKS = {
    "frames": 0,
    "snapshots": 1,
    "approach_info": 2,
    "pick_info": 3,
    "leave_info": 4,
    "interact_info": 5,
    "state_updates": 6,
}


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    trace: str
    seed: int
    version: str
    mode: str
    outputs: dict
    counters: dict

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "trace": self.trace,
            "seed": self.seed,
            "version": self.version,
            "mode": self.mode,
            "outputs": self.outputs,
            "counters": self.counters,
        }


@dataclass
class PipelineResult:
    transitions: list[TransitionLogEntry]
    groups: list[GroupLogEntry]
    manifest: RunManifest
    report: RunReport


def config_hash(cfg: PipelineConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_graph(cfg: PipelineConfig, zone: ItemZone):
    """Create the bus, topics, and the node set in their layer order."""
    bus = MessageBus()
    for topic, rank in TOPIC_RANKS.items():
        bus.create_topic(topic, rank)
    unified = UnifiedLogNode(zone, cfg)
    nodes = [
        BaseLayerNode(zone, cfg),
        ApproachNode(zone, cfg),
        PickNode(zone, cfg),
        LeaveNode(zone, cfg),
        InteractNode(cfg),
        unified,
    ]
    return bus, nodes, unified


def run_pipeline(
    frames: Iterable[TraceFrame],
    cfg: PipelineConfig,
    zone: ItemZone,
    mode: str = "deterministic",
    trace_name: str = "<memory>",
    transcript_path: str | Path | None = None,
) -> PipelineResult:
    """Replay a trace through the full node graph and collect both logs."""
    validate_config(cfg)
    bus, nodes, unified = build_graph(cfg, zone)
    report = run_graph(bus, nodes, frames, mode=mode, transcript_path=transcript_path)
    manifest = RunManifest(
        config_hash=config_hash(cfg),
        trace=str(trace_name),
        seed=cfg.seed,
        version=__version__,
        mode=mode,
        outputs={},
        counters={
            "frames": report.frames,
            "deliveries": report.deliveries,
            "dropped_messages": report.dropped,
            "rejected_events": unified.rejected_events,
            "absence_leaves": unified.absence_leaves,
            "reincarnations": unified.reincarnations,
            "dropped_group_members": unified.dropped_group_members,
            "transcript_hash": report.transcript_hash,
        },
    )
    return PipelineResult(
        transitions=list(unified.transitions),
        groups=list(unified.groups),
        manifest=manifest,
        report=report,
    )


TRANSITIONS_CSV = "transitions.csv"
TRANSITIONS_JSONL = "transitions.jsonl"
GROUPS_CSV = "groups.csv"
MANIFEST_JSON = "manifest.json"


def write_run_outputs(result: PipelineResult, out_dir: str | Path) -> dict:
    """Write both log views plus the manifest into ``out_dir``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "transition_log": str(out / TRANSITIONS_CSV),
        "transition_records": str(out / TRANSITIONS_JSONL),
        "group_log": str(out / GROUPS_CSV),
        "manifest": str(out / MANIFEST_JSON),
    }
    write_transition_log(result.transitions, paths["transition_log"])
    write_transition_records(result.transitions, paths["transition_records"])
    write_group_log(result.groups, paths["group_log"])
    manifest = result.manifest.to_dict()
    manifest["outputs"] = {k: v for k, v in paths.items() if k != "manifest"}
    with open(paths["manifest"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
