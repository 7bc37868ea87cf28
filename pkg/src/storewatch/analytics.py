"""Report aggregation over the logs, and prediction-vs-truth evaluation.

Reports are plain column/row tables with deterministic CSV serialization.
A personal event counts as "in group" when its person belongs to some
group-log entry within half a group tick of the event. Evaluation
matches predictions to ground truth greedily in chronological order
(same person, same state, within the configured time window); group
evaluation samples per group tick and matches member sets by best
Jaccard overlap at 0.5 or better, one-to-one per tick.

Precision (resp. recall) is reported as ``None`` whenever its
denominator is zero, and serialized as an explicit null.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Sequence

from .core import GroupType, ItemZone, PersonType, PipelineConfig, State
from .states import DATETIME_FORMAT
from .trace_io import (
    GroundTruthEvent,
    GroundTruthGroup,
    GroupLogEntry,
    TransitionLogEntry,
)


@dataclass(frozen=True)
class ReportTable:
    name: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class EvalMetrics:
    tp: int
    fp: int
    fn: int
    precision: float | None
    recall: float | None

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "EvalMetrics":
        precision = tp / (tp + fp) if (tp + fp) > 0 else None
        recall = tp / (tp + fn) if (tp + fn) > 0 else None
        return cls(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision, "recall": self.recall}


# ---------------------------------------------------------------------------
# Shared helpers


def _hour_of(entry: TransitionLogEntry) -> int:
    return datetime.strptime(entry.datetime_text, DATETIME_FORMAT).hour


def _group_times_by_person(group_log: Sequence[GroupLogEntry]) -> dict[int, list[float]]:
    times: dict[int, list[float]] = {}
    for g in group_log:
        for pid in g.member_ids:
            times.setdefault(pid, []).append(g.t)
    for ts in times.values():
        ts.sort()
    return times


def _in_group(person_id: int, t: float, group_times: dict[int, list[float]], half_window: float) -> bool:
    return any(abs(gt - t) <= half_window for gt in group_times.get(person_id, ()))


def _is_a(entry: TransitionLogEntry) -> bool:
    return entry.state is State.APPROACH


def _is_p(entry: TransitionLogEntry) -> bool:
    return entry.state is State.PICK


# ---------------------------------------------------------------------------
# Report tables


def hourly_state_counts(
    transition_log: Sequence[TransitionLogEntry],
    group_log: Sequence[GroupLogEntry],
    cfg: PipelineConfig,
) -> ReportTable:
    """Hourly approach/pick counts for customers, total and while grouped."""
    group_times = _group_times_by_person(group_log)
    buckets: dict[int, list[int]] = {}
    for e in transition_log:
        if e.person_type is not PersonType.CUSTOMER:
            continue
        if not (_is_a(e) or _is_p(e)):
            continue
        hour = _hour_of(e)
        row = buckets.setdefault(hour, [0, 0, 0, 0])
        grouped = _in_group(e.person_id, e.t, group_times, cfg.group_join_window)
        if _is_a(e):
            row[0] += 1
            row[1] += int(grouped)
        else:
            row[2] += 1
            row[3] += int(grouped)
    rows = tuple((hour, *buckets[hour]) for hour in sorted(buckets))
    return ReportTable(
        name="hourly_counts",
        columns=("hour", "approach_total", "approach_in_group", "pick_total", "pick_in_group"),
        rows=rows,
    )


def _epoch_intervals(transition_log: Sequence[TransitionLogEntry]):
    """Group entries by (person, epoch), each list ordered by row id."""
    episodes: dict[tuple[int, int], list[TransitionLogEntry]] = {}
    for e in transition_log:
        episodes.setdefault((e.person_id, e.epoch), []).append(e)
    for entries in episodes.values():
        entries.sort(key=lambda e: e.row_id)
    return episodes


def _grouped_seconds(person_id: int, t0: float, t1: float, group_times, tick: float) -> float:
    """Seconds of [t0, t1] covered by this person's group ticks."""
    return tick * sum(1 for gt in group_times.get(person_id, ()) if t0 <= gt <= t1)


def person_state_durations(
    transition_log: Sequence[TransitionLogEntry],
    group_log: Sequence[GroupLogEntry],
    cfg: PipelineConfig,
) -> ReportTable:
    """Per person/hour: approach and pick dwell seconds, split by grouping.

    Approach duration spans from the approach entry to the epoch's leave
    entry; pick duration sums the gaps from each pick entry to the next
    entry. Intervals still open at the end of the log close at the last
    logged timestamp and are counted in the ``clamped`` column.
    """
    if not transition_log:
        return ReportTable(
            name="person_durations",
            columns=(
                "person_id",
                "hour",
                "approach_seconds",
                "approach_in_group_seconds",
                "pick_seconds",
                "pick_in_group_seconds",
                "clamped",
            ),
            rows=(),
        )
    group_times = _group_times_by_person(group_log)
    log_end = max(e.t for e in transition_log)
    rows = []
    for (pid, _epoch), entries in sorted(_epoch_intervals(transition_log).items()):
        if entries[0].person_type is not PersonType.CUSTOMER:
            continue
        clamped = 0
        approach_entry = next((e for e in entries if _is_a(e)), None)
        leave_entry = next((e for e in entries if e.state is State.LEAVE), None)
        a_seconds = a_group = 0.0
        if approach_entry is not None:
            if leave_entry is not None:
                t_end = leave_entry.t
            else:
                t_end = log_end
                clamped += 1
            a_seconds = max(0.0, t_end - approach_entry.t)
            a_group = _grouped_seconds(pid, approach_entry.t, t_end, group_times, cfg.group_tick)
        p_seconds = p_group = 0.0
        for i, e in enumerate(entries):
            if not _is_p(e):
                continue
            if i + 1 < len(entries):
                t_next = entries[i + 1].t
            else:
                t_next = log_end
                clamped += 1
            p_seconds += max(0.0, t_next - e.t)
            p_group += _grouped_seconds(pid, e.t, t_next, group_times, cfg.group_tick)
        if approach_entry is None and p_seconds == 0.0:
            continue
        hour = _hour_of(approach_entry if approach_entry is not None else entries[0])
        rows.append((pid, hour, a_seconds, a_group, p_seconds, p_group, clamped))
    return ReportTable(
        name="person_durations",
        columns=(
            "person_id",
            "hour",
            "approach_seconds",
            "approach_in_group_seconds",
            "pick_seconds",
            "pick_in_group_seconds",
            "clamped",
        ),
        rows=tuple(rows),
    )


def person_state_counts(transition_log: Sequence[TransitionLogEntry]) -> ReportTable:
    """Per person/hour counts of approach entries and pick entries (customers)."""
    buckets: dict[tuple[int, int], list[int]] = {}
    for e in transition_log:
        if e.person_type is not PersonType.CUSTOMER:
            continue
        if _is_a(e):
            buckets.setdefault((e.person_id, _hour_of(e)), [0, 0])[0] += 1
        elif _is_p(e):
            buckets.setdefault((e.person_id, _hour_of(e)), [0, 0])[1] += 1
    rows = tuple((pid, hour, a, p) for (pid, hour), (a, p) in sorted(buckets.items()))
    return ReportTable(
        name="person_counts",
        columns=("person_id", "hour", "approach_count", "pick_count"),
        rows=rows,
    )


def position_export(
    transition_log: Sequence[TransitionLogEntry],
    group_log: Sequence[GroupLogEntry],
    cfg: PipelineConfig,
    zone: ItemZone | None = None,
) -> ReportTable:
    """Ground-plane positions of every transition, plus the zone rectangle corners."""
    group_times = _group_times_by_person(group_log)
    rows = []
    if zone is not None:
        c, h = zone.center3d, zone.half_extent
        for dx, dz in ((-h, -h), (-h, h), (h, h), (h, -h)):
            rows.append(("zone", None, None, None, c.x + dx, c.z + dz, None))
    for e in transition_log:
        rows.append(
            (
                "person",
                e.person_id,
                e.person_type.value,
                e.state.value,
                e.x,
                e.z,
                _in_group(e.person_id, e.t, group_times, cfg.group_join_window),
            )
        )
    return ReportTable(
        name="positions",
        columns=("kind", "person_id", "person_type", "state", "x", "z", "in_group"),
        rows=tuple(rows),
    )


def group_type_distribution(group_log: Sequence[GroupLogEntry]) -> ReportTable:
    """Share of group-ticks per formation type; percentages are null when empty."""
    counts = {gt: 0 for gt in GroupType}
    for e in group_log:
        counts[e.group_type] += 1
    total = sum(counts.values())
    rows = tuple(
        (gt.value, counts[gt], (100.0 * counts[gt] / total) if total else None) for gt in GroupType
    )
    return ReportTable(name="group_distribution", columns=("group_type", "ticks", "percent"), rows=rows)


def group_time_per_person(group_log: Sequence[GroupLogEntry], cfg: PipelineConfig) -> ReportTable:
    """Seconds each person spent in each formation type (tick count x tick length)."""
    ticks: dict[int, dict[GroupType, int]] = {}
    types: dict[int, PersonType] = {}
    for e in group_log:
        for pid, ptype in zip(e.member_ids, e.member_types):
            ticks.setdefault(pid, {gt: 0 for gt in GroupType})[e.group_type] += 1
            types[pid] = ptype
    rows = []
    for pid in sorted(ticks):
        per_type = [cfg.group_tick * ticks[pid][gt] for gt in GroupType]
        rows.append((pid, types[pid].value, *per_type, sum(per_type)))
    return ReportTable(
        name="group_time",
        columns=("person_id", "person_type", *(gt.value.lower() + "_seconds" for gt in GroupType), "total_seconds"),
        rows=tuple(rows),
    )


def state_and_group_time(
    transition_log: Sequence[TransitionLogEntry],
    group_log: Sequence[GroupLogEntry],
    cfg: PipelineConfig,
) -> ReportTable:
    """Approach/pick dwell plus total group time, for people with an A or P entry."""
    durations = person_state_durations(transition_log, group_log, cfg)
    a_seconds: dict[int, float] = {}
    p_seconds: dict[int, float] = {}
    for row in durations.rows:
        pid = row[0]
        a_seconds[pid] = a_seconds.get(pid, 0.0) + row[2]
        p_seconds[pid] = p_seconds.get(pid, 0.0) + row[4]
    group_seconds: dict[int, float] = {}
    for e in group_log:
        for pid in e.member_ids:
            group_seconds[pid] = group_seconds.get(pid, 0.0) + cfg.group_tick
    eligible = {e.person_id for e in transition_log if _is_a(e) or _is_p(e)}
    rows = tuple(
        (pid, a_seconds.get(pid, 0.0), p_seconds.get(pid, 0.0), group_seconds.get(pid, 0.0))
        for pid in sorted(eligible)
    )
    return ReportTable(
        name="state_group_time",
        columns=("person_id", "approach_seconds", "pick_seconds", "group_seconds"),
        rows=rows,
    )


def customer_staff_time(group_log: Sequence[GroupLogEntry], cfg: PipelineConfig) -> ReportTable:
    """Per customer: seconds spent in groups containing at least one staff member."""
    seconds: dict[int, float] = {}
    for e in group_log:
        if PersonType.STAFF not in e.member_types or PersonType.CUSTOMER not in e.member_types:
            continue
        for pid, ptype in zip(e.member_ids, e.member_types):
            if ptype is PersonType.CUSTOMER:
                seconds[pid] = seconds.get(pid, 0.0) + cfg.group_tick
    rows = tuple((pid, seconds[pid]) for pid in sorted(seconds))
    return ReportTable(name="customer_staff_time", columns=("person_id", "seconds"), rows=rows)


# ---------------------------------------------------------------------------
# Evaluation


def evaluate_states(
    transition_log: Sequence[TransitionLogEntry],
    truth_events: Sequence[GroundTruthEvent],
    cfg: PipelineConfig,
) -> dict[str, EvalMetrics]:
    """Greedy chronological matching of predicted transitions to truth events."""
    results: dict[str, EvalMetrics] = {}
    for letter in ("A", "P", "L"):
        state = State(letter)
        predictions = sorted(
            ((e.t, e.row_id, e.person_id) for e in transition_log if e.state is state),
            key=lambda p: (p[0], p[1]),
        )
        truths = [ev for ev in truth_events if ev.event == letter]
        matched = [False] * len(truths)
        tp = fp = 0
        for t_pred, _row, pid in predictions:
            best = None
            best_gap = None
            for i, ev in enumerate(truths):
                if matched[i] or ev.person_id != pid:
                    continue
                gap = abs(ev.t - t_pred)
                if gap <= cfg.match_window and (best_gap is None or gap < best_gap):
                    best, best_gap = i, gap
            if best is not None:
                matched[best] = True
                tp += 1
            else:
                fp += 1
        fn = matched.count(False)
        results[letter] = EvalMetrics.from_counts(tp, fp, fn)
    return results


@dataclass(frozen=True)
class GroupEvalResult:
    metrics: EvalMetrics
    type_matches: int
    type_accuracy: float | None

    def to_dict(self) -> dict:
        d = self.metrics.to_dict()
        d["type_matches"] = self.type_matches
        d["type_accuracy"] = self.type_accuracy
        return d


def _truth_ticks(group: GroundTruthGroup, tick: float) -> list[float]:
    k = math.ceil(group.t_start / tick - 1e-9)
    ticks = []
    while k * tick < group.t_end - 1e-9:
        ticks.append(k * tick)
        k += 1
    return ticks


def jaccard(a: Sequence[int], b: Sequence[int]) -> float:
    sa, sb = set(a), set(b)
    union = sa | sb
    return len(sa & sb) / len(union) if union else 0.0


def evaluate_groups(
    group_log: Sequence[GroupLogEntry],
    truth_groups: Sequence[GroundTruthGroup],
    cfg: PipelineConfig,
) -> GroupEvalResult:
    """Per-tick one-to-one matching by best member-set Jaccard (>= 0.5)."""
    preds_by_tick: dict[float, list[GroupLogEntry]] = {}
    for e in group_log:
        preds_by_tick.setdefault(e.t, []).append(e)
    truths_by_tick: dict[float, list[GroundTruthGroup]] = {}
    for g in truth_groups:
        for t in _truth_ticks(g, cfg.group_tick):
            truths_by_tick.setdefault(t, []).append(g)
    tp = fp = fn = type_matches = 0
    for t in sorted(set(preds_by_tick) | set(truths_by_tick)):
        preds = preds_by_tick.get(t, [])
        truths = truths_by_tick.get(t, [])
        candidates = []
        for i, p in enumerate(preds):
            for j, g in enumerate(truths):
                score = jaccard(p.member_ids, g.member_ids)
                if score >= 0.5:
                    candidates.append((-score, i, j))
        candidates.sort()
        used_p: set[int] = set()
        used_t: set[int] = set()
        for neg_score, i, j in candidates:
            if i in used_p or j in used_t:
                continue
            used_p.add(i)
            used_t.add(j)
            tp += 1
            if preds[i].group_type is truths[j].group_type:
                type_matches += 1
        fp += len(preds) - len(used_p)
        fn += len(truths) - len(used_t)
    metrics = EvalMetrics.from_counts(tp, fp, fn)
    return GroupEvalResult(
        metrics=metrics,
        type_matches=type_matches,
        type_accuracy=(type_matches / tp) if tp else None,
    )


def write_metrics(
    states: dict[str, EvalMetrics],
    groups: GroupEvalResult,
    path: str | Path,
) -> None:
    payload = {
        "states": {letter: m.to_dict() for letter, m in states.items()},
        "groups": groups.to_dict(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def all_report_tables(
    transition_log: Sequence[TransitionLogEntry],
    group_log: Sequence[GroupLogEntry],
    cfg: PipelineConfig,
    zone: ItemZone | None = None,
) -> list[ReportTable]:
    return [
        hourly_state_counts(transition_log, group_log, cfg),
        person_state_durations(transition_log, group_log, cfg),
        person_state_counts(transition_log),
        position_export(transition_log, group_log, cfg, zone),
        group_type_distribution(group_log),
        group_time_per_person(group_log, cfg),
        state_and_group_time(transition_log, group_log, cfg),
        customer_staff_time(group_log, cfg),
    ]
