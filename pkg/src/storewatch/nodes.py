"""Base-layer node: turns raw frames into per-person snapshot messages.

Stands in for the perception stack; the trace already carries every
attribute, so this node validates, resolves the picking verdict, and
maintains each person's rolling history window that the behavior
detectors consume (attached to each message as an immutable tuple).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .bus import Envelope, Node
from .core import (
    ArmKeypoints,
    BBox2D,
    HeadPose,
    ItemZone,
    Observation,
    PersonType,
    PipelineConfig,
    Vec3,
)


@dataclass(frozen=True)
class PersonSnapshot:
    """One person's attributes for one frame, with the picking verdict resolved."""

    t: float
    frame: int
    person_id: int
    person_type: PersonType
    bbox: BBox2D
    pos3d: Vec3
    head: HeadPose
    arms: ArmKeypoints | None
    picking: bool
    held_item: int | None


@dataclass(frozen=True)
class SnapshotMessage:
    """A snapshot plus that person's recent history (oldest first, ends with the snapshot)."""

    snapshot: PersonSnapshot
    history: tuple[PersonSnapshot, ...]


def resolve_picking(obs: Observation, zone: ItemZone, cfg: PipelineConfig) -> bool:
    """Trust an upstream picking flag when present, else infer from wrist reach."""
    if obs.picking_flag is not None:
        return obs.picking_flag
    if obs.arms is None:
        return False
    c = zone.center3d
    for wrist in obs.arms.wrists():
        d2 = (wrist.x - c.x) ** 2 + (wrist.y - c.y) ** 2 + (wrist.z - c.z) ** 2
        if d2 <= cfg.pick_radius**2:
            return True
    return False


class BaseLayerNode(Node):
    """Publishes one PersonSnapshot per observation and owns history buffers."""

    name = "base"

    def __init__(self, zone: ItemZone, cfg: PipelineConfig):
        self.zone = zone
        self.cfg = cfg
        self._history: dict[int, deque[PersonSnapshot]] = {}
        self._last_seen: dict[int, float] = {}
        self.snapshots_published = 0

    def handlers(self):
        return {"frames": self.on_frame}

    def on_frame(self, env: Envelope):
        frame = env.payload
        pubs = []
        for obs in frame.observations:
            pid = obs.person_id
            last = self._last_seen.get(pid)
            if last is not None and obs.t - last > self.cfg.absent_timeout:
                # Track re-acquired after a long gap: stale windows would
                # mix two visits, so start fresh.
                self._history[pid].clear()
            snapshot = PersonSnapshot(
                t=obs.t,
                frame=obs.frame,
                person_id=pid,
                person_type=obs.person_type,
                bbox=obs.bbox,
                pos3d=obs.pos3d,
                head=obs.head,
                arms=obs.arms,
                picking=resolve_picking(obs, self.zone, self.cfg),
                held_item=obs.held_item,
            )
            history = self._history.setdefault(pid, deque(maxlen=self.cfg.history_capacity()))
            history.append(snapshot)
            self._last_seen[pid] = obs.t
            pubs.append(("snapshots", frame.t, SnapshotMessage(snapshot, tuple(history))))
            self.snapshots_published += 1
        return pubs

    def last_seen(self, person_id: int) -> float | None:
        return self._last_seen.get(person_id)
