"""Advanced-layer detectors: approach, pick, leave, and group interaction.

Approach and leave scan a fixed window of a person's newest snapshots and
fire when both a 3D proximity count and a 2D box-overlap count clear
their thresholds (leave uses the inverted predicates). Pick keeps a
consecutive-picking streak plus an item vote list and fires on the voted
majority item. Interaction detection classifies pairs by a shared-space
construction, reconstructs groups as connected components, and types
two-person groups by the angle between facing directions.

Each detector node mirrors the unified log's per-person state via
state-update messages and applies the state guards locally, so a
detector never needs to share memory with the log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .bus import ApproachInfo, Envelope, InteractInfo, LeaveCause, LeaveInfo, Node, PickInfo, StateUpdate
from .core import (
    GroupType,
    ItemZone,
    PipelineConfig,
    State,
    bbox_overlap,
    effort_angle,
    facing_vector,
    ground_distance,
    ground_distance_between,
)
from .nodes import PersonSnapshot, SnapshotMessage


# ---------------------------------------------------------------------------
# Approach / leave window rules


def approach_step(
    history: Sequence[PersonSnapshot],
    state: State,
    zone: ItemZone,
    cfg: PipelineConfig,
) -> ApproachInfo | None:
    """Fire an approach for an idle person whose recent window is near the zone.

    Requires a full window (newest ``window_frames`` snapshots) in which
    at least ``approach_3d_count`` snapshots are within ``approach_distance``
    of the zone point and at least ``approach_2d_count`` boxes overlap the
    zone area.
    """
    if state is not State.IDLE:
        return None
    if len(history) < cfg.window_frames:
        return None
    window = list(history)[-cfg.window_frames :]
    near_3d = 0
    overlap_2d = 0
    for snap in window:
        if ground_distance(snap.pos3d, zone) <= cfg.approach_distance:
            near_3d += 1
        if bbox_overlap(snap.bbox, zone.rect2d):
            overlap_2d += 1
    if near_3d >= cfg.approach_3d_count and overlap_2d >= cfg.approach_2d_count:
        latest = window[-1]
        return ApproachInfo(
            person_id=latest.person_id,
            person_type=latest.person_type,
            pos3d=latest.pos3d,
            distance_m=ground_distance(latest.pos3d, zone),
            t=latest.t,
        )
    return None


def leave_step(
    history: Sequence[PersonSnapshot],
    state: State,
    zone: ItemZone,
    cfg: PipelineConfig,
) -> LeaveInfo | None:
    """Mirror of the approach rule with inverted predicates (far and non-overlapping)."""
    if state not in (State.IDLE, State.APPROACH, State.PICK):
        return None
    if len(history) < cfg.leave_window:
        return None
    window = list(history)[-cfg.leave_window :]
    far_3d = 0
    outside_2d = 0
    for snap in window:
        if ground_distance(snap.pos3d, zone) >= cfg.leave_distance:
            far_3d += 1
        if not bbox_overlap(snap.bbox, zone.rect2d):
            outside_2d += 1
    if far_3d >= cfg.leave_3d_count and outside_2d >= cfg.leave_2d_count:
        latest = window[-1]
        return LeaveInfo(
            person_id=latest.person_id,
            pos3d=latest.pos3d,
            distance_m=ground_distance(latest.pos3d, zone),
            t=latest.t,
            cause=LeaveCause.DEPARTED,
        )
    return None


# ---------------------------------------------------------------------------
# Pick rule


@dataclass
class PickCounters:
    """Per-person picking streak and classified item votes; reset together."""

    streak: int = 0
    votes: list[int] = field(default_factory=list)

    def reset(self) -> None:
        self.streak = 0
        self.votes = []


def vote_majority(votes: Sequence[int]) -> int:
    """Most frequent item id; ties break toward the smallest id."""
    counts: dict[int, int] = {}
    for v in votes:
        counts[v] = counts.get(v, 0) + 1
    return max(counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]


def pick_step(
    snapshot: PersonSnapshot,
    state: State,
    counters: PickCounters,
    zone: ItemZone,
    cfg: PipelineConfig,
) -> PickInfo | None:
    """Advance the picking streak for one snapshot; fire on streak + vote quota.

    A non-picking snapshot resets both counters. After an emission the
    counters reset so a sustained hold produces one event per completed
    streak rather than one per frame.
    """
    if state not in (State.APPROACH, State.PICK):
        return None
    if snapshot.picking:
        counters.streak += 1
        if snapshot.held_item is not None:
            counters.votes.append(snapshot.held_item)
    else:
        counters.reset()
        return None
    if counters.streak >= cfg.pick_streak and len(counters.votes) >= cfg.pick_votes:
        item = vote_majority(counters.votes)
        counters.reset()
        return PickInfo(person_id=snapshot.person_id, item_id=item, t=snapshot.t)
    return None


# ---------------------------------------------------------------------------
# Group interaction rules


@dataclass(frozen=True)
class FFormationGroup:
    """A detected group: smallest member id names the group."""

    group_id: int
    member_ids: tuple[int, ...]
    group_type: GroupType
    t: float

    def __post_init__(self):
        if len(self.member_ids) < 2:
            raise ValueError("group requires at least 2 members")
        if (len(self.member_ids) > 2) != (self.group_type is GroupType.CIRCULAR):
            raise ValueError("Circular exactly for groups larger than 2")


def _shared_space_point(snap: PersonSnapshot, cfg: PipelineConfig) -> tuple[float, float]:
    fx, fz = facing_vector(snap.head)
    return (snap.pos3d.x + cfg.stride * fx, snap.pos3d.z + cfg.stride * fz)


def pairwise_interacting(a: PersonSnapshot, b: PersonSnapshot, cfg: PipelineConfig) -> bool:
    """Two people interact when close together and their projected focal points agree."""
    if ground_distance_between(a.pos3d, b.pos3d) > cfg.pair_distance:
        return False
    ca = _shared_space_point(a, cfg)
    cb = _shared_space_point(b, cfg)
    dx = ca[0] - cb[0]
    dz = ca[1] - cb[1]
    return (dx * dx + dz * dz) ** 0.5 <= cfg.focus_eps


def classify_pair_angle(delta: float, cfg: PipelineConfig) -> GroupType:
    """Type a two-person group from the facing angle; the middle band is closed."""
    if delta < cfg.angle_low:
        return GroupType.SIDE_BY_SIDE
    if delta > cfg.angle_high:
        return GroupType.VIS_VIS
    return GroupType.L_SHAPE


def classify_group(members: Sequence[PersonSnapshot], cfg: PipelineConfig) -> GroupType:
    if len(members) < 2:
        raise ValueError("group requires at least 2 members")
    if len(members) > 2:
        return GroupType.CIRCULAR
    delta = effort_angle(facing_vector(members[0].head), facing_vector(members[1].head))
    return classify_pair_angle(delta, cfg)


def detect_groups(snapshots: Sequence[PersonSnapshot], cfg: PipelineConfig) -> list[list[PersonSnapshot]]:
    """Cluster snapshots into interacting components; singletons are discarded.

    Returns member lists sorted by person id, components ordered by their
    smallest member id.
    """
    people = sorted(snapshots, key=lambda s: s.person_id)
    parent = list(range(len(people)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(people)):
        for j in range(i + 1, len(people)):
            if pairwise_interacting(people[i], people[j], cfg):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
    components: dict[int, list[PersonSnapshot]] = {}
    for i, snap in enumerate(people):
        components.setdefault(find(i), []).append(snap)
    groups = [members for members in components.values() if len(members) >= 2]
    groups.sort(key=lambda members: members[0].person_id)
    return groups


def interact_step(snapshots: Sequence[PersonSnapshot], t: float, cfg: PipelineConfig) -> InteractInfo:
    """Detect and classify every group present at one tick."""
    groups = []
    for members in detect_groups(snapshots, cfg):
        gtype = classify_group(members, cfg)
        member_ids = tuple(s.person_id for s in members)
        groups.append((member_ids[0], gtype, member_ids))
    return InteractInfo(t=t, groups=tuple(groups))


# ---------------------------------------------------------------------------
# Detector nodes


class _StateMirror:
    """Local copy of each person's state, fed by unified-log broadcasts."""

    def __init__(self):
        self._states: dict[int, State] = {}

    def get(self, person_id: int) -> State:
        return self._states.get(person_id, State.IDLE)

    def update(self, info: StateUpdate) -> None:
        self._states[info.person_id] = info.state


class ApproachNode(Node):
    name = "approach"

    def __init__(self, zone: ItemZone, cfg: PipelineConfig):
        self.zone = zone
        self.cfg = cfg
        self.mirror = _StateMirror()

    def handlers(self):
        return {"snapshots": self.on_snapshot, "state_updates": self.on_state}

    def on_snapshot(self, env: Envelope):
        msg: SnapshotMessage = env.payload
        info = approach_step(msg.history, self.mirror.get(msg.snapshot.person_id), self.zone, self.cfg)
        if info is not None:
            return [("approach_info", env.t, info)]
        return None

    def on_state(self, env: Envelope):
        self.mirror.update(env.payload)
        return None


class PickNode(Node):
    name = "pick"

    def __init__(self, zone: ItemZone, cfg: PipelineConfig):
        self.zone = zone
        self.cfg = cfg
        self.mirror = _StateMirror()
        self.counters: dict[int, PickCounters] = {}

    def handlers(self):
        return {"snapshots": self.on_snapshot, "state_updates": self.on_state}

    def on_snapshot(self, env: Envelope):
        msg: SnapshotMessage = env.payload
        pid = msg.snapshot.person_id
        counters = self.counters.setdefault(pid, PickCounters())
        info = pick_step(msg.snapshot, self.mirror.get(pid), counters, self.zone, self.cfg)
        if info is not None:
            return [("pick_info", env.t, info)]
        return None

    def on_state(self, env: Envelope):
        update: StateUpdate = env.payload
        self.mirror.update(update)
        # Streaks only make sense while the person can legally pick.
        if update.state not in (State.APPROACH, State.PICK):
            self.counters.pop(update.person_id, None)
        return None


class LeaveNode(Node):
    name = "leave"

    def __init__(self, zone: ItemZone, cfg: PipelineConfig):
        self.zone = zone
        self.cfg = cfg
        self.mirror = _StateMirror()

    def handlers(self):
        return {"snapshots": self.on_snapshot, "state_updates": self.on_state}

    def on_snapshot(self, env: Envelope):
        msg: SnapshotMessage = env.payload
        info = leave_step(msg.history, self.mirror.get(msg.snapshot.person_id), self.zone, self.cfg)
        if info is not None:
            return [("leave_info", env.t, info)]
        return None

    def on_state(self, env: Envelope):
        self.mirror.update(env.payload)
        return None


class InteractNode(Node):
    """Publishes one InteractInfo per group tick from that frame's snapshots."""

    name = "interact"

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self._next_tick_index: int | None = None
        self._expected = 0
        self._frame_t = 0.0
        self._due_ticks: list[float] = []
        self._buffer: list[PersonSnapshot] = []

    def handlers(self):
        return {"frames": self.on_frame, "snapshots": self.on_snapshot}

    def _tick_value(self, index: int) -> float:
        return index * self.cfg.group_tick

    def on_frame(self, env: Envelope):
        frame = env.payload
        if self._next_tick_index is None:
            # Align the tick grid at the first frame (ceil to the grid).
            self._next_tick_index = math.ceil(frame.t / self.cfg.group_tick - 1e-9)
        self._frame_t = frame.t
        self._buffer = []
        self._due_ticks = []
        while self._tick_value(self._next_tick_index) <= frame.t + 1e-9:
            self._due_ticks.append(self._tick_value(self._next_tick_index))
            self._next_tick_index += 1
        self._expected = len(frame.observations)
        if self._expected == 0:
            return self._flush()
        return None

    def on_snapshot(self, env: Envelope):
        msg: SnapshotMessage = env.payload
        if msg.snapshot.t != self._frame_t:
            return None
        self._buffer.append(msg.snapshot)
        if len(self._buffer) == self._expected:
            return self._flush()
        return None

    def _flush(self):
        if not self._due_ticks:
            return None
        pubs = []
        for tick in self._due_ticks:
            pubs.append(("interact_info", tick, interact_step(self._buffer, tick, self.cfg)))
        self._due_ticks = []
        return pubs
