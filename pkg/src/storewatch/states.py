"""Unified log: owns every person's state machine and both output logs.

A person starts Idle when first seen; Leave is terminal within an epoch.
Because people re-enter the scene, a retired person who reappears after
a long absence starts a fresh epoch (Idle again) under the same id, and
every log row records its epoch. Events that would take an illegal
transition are rejected and counted, never applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Union

from .bus import ApproachInfo, Envelope, InteractInfo, LeaveCause, LeaveInfo, Node, PickInfo, StateUpdate
from .core import (
    LEGAL_TRANSITIONS,
    ItemZone,
    PersonType,
    PipelineConfig,
    State,
    Vec3,
    ground_distance,
)
from .nodes import SnapshotMessage
from .trace_io import GroupLogEntry, TransitionLogEntry

StateEvent = Union[ApproachInfo, PickInfo, LeaveInfo]

DATETIME_FORMAT = "%m/%d/%Y, %H:%M:%S"


class StateError(RuntimeError):
    """Raised for unified-log misuse (unknown person, live-epoch reincarnation)."""


@dataclass
class PersonMachine:
    """One tracked person's finite-state machine for the current epoch."""

    person_id: int
    person_type: PersonType
    epoch: int
    state: State
    state_entered_at: float
    last_seen: float
    last_pos: Vec3
    last_item: int | None = None

    @property
    def retired(self) -> bool:
        return self.state is State.LEAVE


class UnifiedLogNode(Node):
    """Applies transitions from detector events and appends both logs."""

    name = "unified_log"

    def __init__(self, zone: ItemZone, cfg: PipelineConfig):
        self.zone = zone
        self.cfg = cfg
        self.origin = datetime.fromisoformat(cfg.time_origin)
        self.machines: dict[int, PersonMachine] = {}
        self.transitions: list[TransitionLogEntry] = []
        self.groups: list[GroupLogEntry] = []
        self.rejected_events = 0
        self.absence_leaves = 0
        self.reincarnations = 0
        self.dropped_group_members = 0
        self._next_row = 1

    def handlers(self):
        return {
            "frames": self.on_frame,
            "snapshots": self.on_snapshot,
            "approach_info": self.on_event,
            "pick_info": self.on_event,
            "leave_info": self.on_event,
            "interact_info": self.on_interact,
        }

    # -- clock helpers ------------------------------------------------------

    def datetime_text(self, t: float) -> str:
        return (self.origin + timedelta(seconds=t)).strftime(DATETIME_FORMAT)

    # -- log emission -------------------------------------------------------

    def _append(
        self,
        machine: PersonMachine,
        new_state: State,
        t: float,
        distance_m: float,
        pos: Vec3,
    ) -> TransitionLogEntry:
        entry = TransitionLogEntry(
            row_id=self._next_row,
            person_id=machine.person_id,
            epoch=machine.epoch,
            prev_state=machine.state,
            state=new_state,
            distance_m=distance_m,
            t=t,
            datetime_text=self.datetime_text(t),
            x=pos.x,
            y=pos.y,
            z=pos.z,
            person_type=machine.person_type,
        )
        self._next_row += 1
        self.transitions.append(entry)
        machine.state = new_state
        machine.state_entered_at = t
        return entry

    # -- spec operations ----------------------------------------------------

    def apply_event(self, event: StateEvent) -> TransitionLogEntry | None:
        """Apply a detector event to its person's machine; illegal events are rejected."""
        machine = self.machines.get(event.person_id)
        if machine is None:
            raise StateError(f"unknown person {event.person_id}")
        if isinstance(event, ApproachInfo):
            new_state = State.APPROACH
        elif isinstance(event, PickInfo):
            new_state = State.PICK
        elif isinstance(event, LeaveInfo):
            new_state = State.LEAVE
        else:
            raise StateError(f"unsupported event type {type(event).__name__}")
        if (machine.state, new_state) not in LEGAL_TRANSITIONS:
            self.rejected_events += 1
            return None
        if isinstance(event, PickInfo):
            machine.last_item = event.item_id
            pos = machine.last_pos
            distance = ground_distance(pos, self.zone)
        else:
            pos = event.pos3d
            distance = event.distance_m
        return self._append(machine, new_state, event.t, distance, pos)

    def absence_sweep(self, now: float) -> list[TransitionLogEntry]:
        """Force-retire every live machine unseen for longer than the timeout."""
        entries = []
        for pid in sorted(self.machines):
            machine = self.machines[pid]
            if machine.retired:
                continue
            if now - machine.last_seen > self.cfg.absent_timeout:
                distance = ground_distance(machine.last_pos, self.zone)
                entries.append(self._append(machine, State.LEAVE, now, distance, machine.last_pos))
                self.absence_leaves += 1
        return entries

    def reincarnate(self, person_id: int, t: float) -> PersonMachine:
        """Start a fresh epoch (Idle) for a retired person who reappeared."""
        machine = self.machines.get(person_id)
        if machine is None:
            raise StateError(f"unknown person {person_id}")
        if not machine.retired:
            raise StateError(f"person {person_id} epoch {machine.epoch} is still live")
        machine.epoch += 1
        machine.state = State.IDLE
        machine.state_entered_at = t
        machine.last_item = None
        self.reincarnations += 1
        return machine

    def record_groups(self, info: InteractInfo) -> list[GroupLogEntry]:
        """Persist one group-log entry per detected group, joined with person types."""
        entries = []
        for group_id, group_type, member_ids in info.groups:
            members = []
            for pid in member_ids:
                machine = self.machines.get(pid)
                if machine is None:
                    self.dropped_group_members += 1
                    continue
                members.append((pid, machine.person_type))
            if len(members) < 2:
                continue
            entry = GroupLogEntry(
                t=info.t,
                group_id=group_id,
                group_type=group_type,
                member_ids=tuple(pid for pid, _ in members),
                member_types=tuple(pt for _, pt in members),
            )
            self.groups.append(entry)
            entries.append(entry)
        return entries

    # -- bus handlers ---------------------------------------------------------

    def _update(self, machine: PersonMachine, t: float):
        return (
            "state_updates",
            t,
            StateUpdate(person_id=machine.person_id, state=machine.state, epoch=machine.epoch, t=t),
        )

    def on_frame(self, env: Envelope):
        pubs = []
        for entry in self.absence_sweep(env.payload.t):
            pubs.append(self._update(self.machines[entry.person_id], env.t))
        return pubs or None

    def on_snapshot(self, env: Envelope):
        snap = env.payload.snapshot if isinstance(env.payload, SnapshotMessage) else env.payload
        machine = self.machines.get(snap.person_id)
        if machine is None:
            self.machines[snap.person_id] = PersonMachine(
                person_id=snap.person_id,
                person_type=snap.person_type,
                epoch=1,
                state=State.IDLE,
                state_entered_at=snap.t,
                last_seen=snap.t,
                last_pos=snap.pos3d,
            )
            return None
        if machine.retired and snap.t - machine.last_seen > self.cfg.absent_timeout:
            self.reincarnate(snap.person_id, snap.t)
            machine.last_seen = snap.t
            machine.last_pos = snap.pos3d
            machine.person_type = snap.person_type
            return [self._update(machine, env.t)]
        machine.last_seen = snap.t
        machine.last_pos = snap.pos3d
        machine.person_type = snap.person_type
        return None

    def on_event(self, env: Envelope):
        entry = self.apply_event(env.payload)
        if entry is None:
            return None
        return [self._update(self.machines[entry.person_id], env.t)]

    def on_interact(self, env: Envelope):
        self.record_groups(env.payload)
        return None
