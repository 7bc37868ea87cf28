"""Reading and writing traces, ground truth, and the transition/group logs.

Traces and ground truth are JSON Lines (one frame or annotation per line);
logs are CSV. Writers are deterministic: identical inputs produce byte
identical files. The transition log exists in two forms: a CSV with the
classic column set (one-decimal distances/coordinates, wall-clock text)
plus an appended Epoch column, and a full-precision JSONL "machine view"
that also carries the trace-clock time and person type for evaluation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .core import (
    LEGAL_TRANSITIONS,
    ArmKeypoints,
    BBox2D,
    GroupType,
    HeadPose,
    Observation,
    PersonType,
    State,
    Vec3,
)


class TraceError(ValueError):
    """A trace, ground-truth, or log file failed validation."""


@dataclass(frozen=True)
class TraceFrame:
    """All observations sharing one frame."""

    t: float
    frame: int
    observations: tuple[Observation, ...]


@dataclass(frozen=True)
class GroundTruthEvent:
    """An annotated behavior event: state letter A/P/L at a trace time."""

    t: float
    person_id: int
    event: str
    item_id: int | None = None

    def __post_init__(self):
        if self.event not in ("A", "P", "L"):
            raise TraceError(f"ground-truth event must be A, P or L, got {self.event!r}")
        if self.event == "P" and self.item_id is None:
            raise TraceError("ground-truth P event requires item_id")


@dataclass(frozen=True)
class GroundTruthGroup:
    """An annotated group interval with its intended formation type."""

    t_start: float
    t_end: float
    member_ids: tuple[int, ...]
    group_type: GroupType

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise TraceError(f"group interval requires t_start < t_end, got [{self.t_start}, {self.t_end}]")
        if len(self.member_ids) < 2:
            raise TraceError("group requires at least 2 members")
        big = len(self.member_ids) > 2
        if big != (self.group_type is GroupType.CIRCULAR):
            raise TraceError("Circular type is required exactly when the group has more than 2 members")


@dataclass(frozen=True)
class TransitionLogEntry:
    """One row of the state-transition log.

    ``t`` and ``person_type`` only appear in the JSONL machine view; the
    CSV keeps the classic column set plus Epoch.
    """

    row_id: int
    person_id: int
    epoch: int
    prev_state: State
    state: State
    distance_m: float
    t: float
    datetime_text: str
    x: float
    y: float
    z: float
    person_type: PersonType


@dataclass(frozen=True)
class GroupLogEntry:
    """One detected group at one group tick."""

    t: float
    group_id: int
    group_type: GroupType
    member_ids: tuple[int, ...]
    member_types: tuple[PersonType, ...]


# ---------------------------------------------------------------------------
# Observation (de)serialization helpers


def _vec3_json(v: Vec3 | None):
    return None if v is None else [v.x, v.y, v.z]


def _vec3_parse(raw, where: str) -> Vec3:
    if not (isinstance(raw, list) and len(raw) == 3):
        raise TraceError(f"{where}: expected [x, y, z]")
    return Vec3(float(raw[0]), float(raw[1]), float(raw[2]))


def _observation_json(o: Observation) -> dict:
    arms = None
    if o.arms is not None:
        arms = {
            "left_wrist": _vec3_json(o.arms.left_wrist),
            "right_wrist": _vec3_json(o.arms.right_wrist),
            "left_elbow": _vec3_json(o.arms.left_elbow),
            "right_elbow": _vec3_json(o.arms.right_elbow),
        }
    return {
        "person_id": o.person_id,
        "person_type": o.person_type.value,
        "bbox": [o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h],
        "pos3d": [o.pos3d.x, o.pos3d.y, o.pos3d.z],
        "head": [o.head.yaw, o.head.pitch, o.head.roll],
        "arms": arms,
        "picking_flag": o.picking_flag,
        "held_item": o.held_item,
    }


_REQUIRED_OBS_FIELDS = ("person_id", "person_type", "bbox", "pos3d", "head")


def _observation_parse(raw: dict, t: float, frame: int, line_no: int) -> Observation:
    for name in _REQUIRED_OBS_FIELDS:
        if name not in raw or raw[name] is None:
            raise TraceError(f"line {line_no}: missing field {name}")
    bbox_raw = raw["bbox"]
    if not (isinstance(bbox_raw, list) and len(bbox_raw) == 4):
        raise TraceError(f"line {line_no}: bbox must be [x, y, w, h]")
    head_raw = raw["head"]
    if not (isinstance(head_raw, list) and len(head_raw) == 3):
        raise TraceError(f"line {line_no}: head must be [yaw, pitch, roll]")
    arms = None
    if raw.get("arms") is not None:
        a = raw["arms"]
        kp = {}
        for key in ("left_wrist", "right_wrist", "left_elbow", "right_elbow"):
            kp[key] = None if a.get(key) is None else _vec3_parse(a[key], f"line {line_no}: arms.{key}")
        arms = ArmKeypoints(**kp)
    try:
        return Observation(
            t=t,
            frame=frame,
            person_id=int(raw["person_id"]),
            person_type=PersonType(raw["person_type"]),
            bbox=BBox2D(*(float(v) for v in bbox_raw)),
            pos3d=_vec3_parse(raw["pos3d"], f"line {line_no}: pos3d"),
            head=HeadPose(*(float(v) for v in head_raw)),
            arms=arms,
            picking_flag=raw.get("picking_flag"),
            held_item=raw.get("held_item"),
        )
    except (ValueError, TypeError) as e:
        raise TraceError(f"line {line_no}: invalid observation: {e}") from e


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


# ---------------------------------------------------------------------------
# Trace files


def write_trace(frames: Iterable[TraceFrame], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for fr in frames:
            record = {
                "t": fr.t,
                "frame": fr.frame,
                "observations": [_observation_json(o) for o in fr.observations],
            }
            fh.write(_dumps(record) + "\n")


def read_trace(path: str | Path) -> list[TraceFrame]:
    """Read and fully validate a trace; frames must be strictly increasing."""
    frames: list[TraceFrame] = []
    last_frame = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceError(f"line {line_no}: invalid record: {e}") from e
            for name in ("t", "frame", "observations"):
                if name not in raw:
                    raise TraceError(f"line {line_no}: missing field {name}")
            frame = int(raw["frame"])
            t = float(raw["t"])
            if last_frame is not None and frame <= last_frame:
                raise TraceError(f"non-monotone frame at line {line_no}")
            last_frame = frame
            seen_ids = set()
            observations = []
            for obs_raw in raw["observations"]:
                obs = _observation_parse(obs_raw, t, frame, line_no)
                if obs.person_id in seen_ids:
                    raise TraceError(
                        f"line {line_no}: duplicate observation for frame {frame} person {obs.person_id}"
                    )
                seen_ids.add(obs.person_id)
                observations.append(obs)
            frames.append(TraceFrame(t=t, frame=frame, observations=tuple(observations)))
    return frames


# ---------------------------------------------------------------------------
# Ground truth files (events and group intervals share one JSONL file)


def write_ground_truth(
    events: Iterable[GroundTruthEvent],
    groups: Iterable[GroundTruthGroup],
    path: str | Path,
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            fh.write(
                _dumps(
                    {
                        "kind": "event",
                        "t": ev.t,
                        "person_id": ev.person_id,
                        "event": ev.event,
                        "item_id": ev.item_id,
                    }
                )
                + "\n"
            )
        for g in groups:
            fh.write(
                _dumps(
                    {
                        "kind": "group",
                        "t_start": g.t_start,
                        "t_end": g.t_end,
                        "member_ids": list(g.member_ids),
                        "group_type": g.group_type.value,
                    }
                )
                + "\n"
            )


def read_ground_truth(path: str | Path) -> tuple[list[GroundTruthEvent], list[GroundTruthGroup]]:
    events: list[GroundTruthEvent] = []
    groups: list[GroundTruthGroup] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceError(f"line {line_no}: invalid record: {e}") from e
            kind = raw.get("kind")
            try:
                if kind == "event":
                    events.append(
                        GroundTruthEvent(
                            t=float(raw["t"]),
                            person_id=int(raw["person_id"]),
                            event=raw["event"],
                            item_id=raw.get("item_id"),
                        )
                    )
                elif kind == "group":
                    groups.append(
                        GroundTruthGroup(
                            t_start=float(raw["t_start"]),
                            t_end=float(raw["t_end"]),
                            member_ids=tuple(int(m) for m in raw["member_ids"]),
                            group_type=GroupType(raw["group_type"]),
                        )
                    )
                else:
                    raise TraceError(f"line {line_no}: unknown record kind {kind!r}")
            except KeyError as e:
                raise TraceError(f"line {line_no}: missing field {e.args[0]}") from e
    return events, groups


# ---------------------------------------------------------------------------
# Transition log


TRANSITION_HEADER = ["RowID", "PersonID", "Prev_State", "State", "Distance(m)", "Date time", "X", "Y", "Z", "Epoch"]


def _check_legal(entries: Sequence[TransitionLogEntry]) -> None:
    last_row = 0
    for e in entries:
        if (e.prev_state, e.state) not in LEGAL_TRANSITIONS:
            raise TraceError(
                f"illegal transition {e.prev_state.value}->{e.state.value} for person {e.person_id} (row {e.row_id})"
            )
        if e.row_id <= last_row:
            raise TraceError(f"row ids must be strictly increasing, got {e.row_id} after {last_row}")
        last_row = e.row_id


def write_transition_log(entries: Sequence[TransitionLogEntry], path: str | Path) -> None:
    """Write the CSV view: classic columns (one-decimal numbers) plus Epoch."""
    _check_legal(entries)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRANSITION_HEADER)
        for e in entries:
            writer.writerow(
                [
                    e.row_id,
                    e.person_id,
                    e.prev_state.value,
                    e.state.value,
                    f"{e.distance_m:.1f}",
                    e.datetime_text,
                    f"{e.x:.1f}",
                    f"{e.y:.1f}",
                    f"{e.z:.1f}",
                    e.epoch,
                ]
            )


def write_transition_records(entries: Sequence[TransitionLogEntry], path: str | Path) -> None:
    """Write the JSONL machine view with full precision."""
    _check_legal(entries)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(
                _dumps(
                    {
                        "row_id": e.row_id,
                        "person_id": e.person_id,
                        "epoch": e.epoch,
                        "prev_state": e.prev_state.value,
                        "state": e.state.value,
                        "distance_m": e.distance_m,
                        "t": e.t,
                        "datetime_text": e.datetime_text,
                        "x": e.x,
                        "y": e.y,
                        "z": e.z,
                        "person_type": e.person_type.value,
                    }
                )
                + "\n"
            )


def read_transition_records(path: str | Path) -> list[TransitionLogEntry]:
    entries: list[TransitionLogEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                entries.append(
                    TransitionLogEntry(
                        row_id=int(raw["row_id"]),
                        person_id=int(raw["person_id"]),
                        epoch=int(raw["epoch"]),
                        prev_state=State(raw["prev_state"]),
                        state=State(raw["state"]),
                        distance_m=float(raw["distance_m"]),
                        t=float(raw["t"]),
                        datetime_text=raw["datetime_text"],
                        x=float(raw["x"]),
                        y=float(raw["y"]),
                        z=float(raw["z"]),
                        person_type=PersonType(raw["person_type"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise TraceError(f"line {line_no}: invalid transition record: {e}") from e
    _check_legal(entries)
    return entries


# ---------------------------------------------------------------------------
# Group log


GROUP_HEADER = ["T", "GroupID", "GroupType", "MemberIDs", "MemberTypes"]


def write_group_log(entries: Sequence[GroupLogEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GROUP_HEADER)
        for e in entries:
            if len(e.member_ids) < 2:
                raise TraceError(f"group at t={e.t} has fewer than 2 members")
            writer.writerow(
                [
                    repr(e.t),
                    e.group_id,
                    e.group_type.value,
                    ";".join(str(m) for m in e.member_ids),
                    ";".join(pt.value for pt in e.member_types),
                ]
            )


def read_group_log(path: str | Path) -> list[GroupLogEntry]:
    entries: list[GroupLogEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != GROUP_HEADER:
            raise TraceError(f"unexpected group log header: {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                entries.append(
                    GroupLogEntry(
                        t=float(row[0]),
                        group_id=int(row[1]),
                        group_type=GroupType(row[2]),
                        member_ids=tuple(int(m) for m in row[3].split(";")),
                        member_types=tuple(PersonType(p) for p in row[4].split(";")),
                    )
                )
            except (ValueError, IndexError) as e:
                raise TraceError(f"line {line_no}: invalid group log row: {e}") from e
    return entries
