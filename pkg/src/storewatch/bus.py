"""In-process publish/subscribe layer with a replayable scheduler.

Topics carry immutable payloads between nodes. A run processes trace
frames one at a time: within a frame, pending messages are delivered in
(t, topic rank, seq) order until the graph is quiescent, then the next
frame is injected. Topic ranks encode the layer direction (camera ->
attribute provider -> behavior detectors -> unified log), so ties break
the same way in both execution modes.

Two modes produce identical observable results:

* ``deterministic`` — single-threaded, delivery strictly in order.
* ``concurrent`` — each delivery batch fans out to per-node worker
  tasks; nodes share no mutable state and only interact through
  envelopes, and publication sequence numbers are assigned in declared
  node order after the batch joins, so transcripts are byte-identical
  to the deterministic mode.

Queues are drained to quiescence every frame, which bounds them by the
per-frame message volume; publishes on a topic nobody subscribes to are
counted as drops.
"""

from __future__ import annotations

import hashlib
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from .core import GroupType, PersonType, State, Vec3


class BusError(RuntimeError):
    """Topic bookkeeping failure (unknown topic, duplicate topic)."""


class NodeError(RuntimeError):
    """A node handler raised; carries the node name and frame."""


# ---------------------------------------------------------------------------
# Message payloads exchanged between layers


@dataclass(frozen=True)
class ApproachInfo:
    person_id: int
    person_type: PersonType
    pos3d: Vec3
    distance_m: float
    t: float

    def __post_init__(self):
        if self.distance_m < 0:
            raise ValueError("distance_m must be >= 0")


@dataclass(frozen=True)
class PickInfo:
    person_id: int
    item_id: int
    t: float


class LeaveCause(str, Enum):
    DEPARTED = "departed"
    ABSENT = "absent"


@dataclass(frozen=True)
class LeaveInfo:
    person_id: int
    pos3d: Vec3
    distance_m: float
    t: float
    cause: LeaveCause

    def __post_init__(self):
        if self.distance_m < 0:
            raise ValueError("distance_m must be >= 0")


@dataclass(frozen=True)
class InteractInfo:
    """All groups detected at one group tick: (group_id, type, member ids)."""

    t: float
    groups: tuple[tuple[int, GroupType, tuple[int, ...]], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for _, _, members in self.groups:
            for m in members:
                if m in seen:
                    raise ValueError(f"member {m} appears in two groups at t={self.t}")
                seen.add(m)


@dataclass(frozen=True)
class StateUpdate:
    """Unified-log broadcast so detectors can mirror each person's state."""

    person_id: int
    state: State
    epoch: int
    t: float


@dataclass(frozen=True)
class Envelope:
    topic: str
    t: float
    seq: int
    payload: object


class Subscription:
    """A FIFO of envelopes delivered on one topic."""

    def __init__(self, topic: str):
        self.topic = topic
        self.queue: deque[Envelope] = deque()

    def pop_all(self) -> list[Envelope]:
        items = list(self.queue)
        self.queue.clear()
        return items


class MessageBus:
    """Topic registry plus fan-out delivery with counters."""

    def __init__(self):
        self._ranks: dict[str, int] = {}
        self._subs: dict[str, list[Subscription]] = {}
        self._next_seq = 0
        self.delivered = 0
        self.dropped = 0
        self.published: dict[str, int] = {}

    def create_topic(self, name: str, rank: int = 0) -> str:
        if name in self._ranks:
            raise BusError(f"topic already exists: {name}")
        self._ranks[name] = rank
        self._subs[name] = []
        self.published[name] = 0
        return name

    def topic_rank(self, name: str) -> int:
        try:
            return self._ranks[name]
        except KeyError:
            raise BusError(f"unknown topic: {name}") from None

    def subscribe(self, topic: str) -> Subscription:
        if topic not in self._ranks:
            raise BusError(f"unknown topic: {topic}")
        sub = Subscription(topic)
        self._subs[topic].append(sub)
        return sub

    def publish(self, topic: str, payload: object, t: float) -> Envelope:
        """Assign the next sequence number and enqueue on every subscription."""
        if topic not in self._ranks:
            raise BusError(f"unknown topic: {topic}")
        env = Envelope(topic=topic, t=t, seq=self._next_seq, payload=payload)
        self._next_seq += 1
        self.published[topic] += 1
        subs = self._subs[topic]
        if not subs:
            self.dropped += 1
            return env
        for sub in subs:
            sub.queue.append(env)
        self.delivered += len(subs)
        return env


# ---------------------------------------------------------------------------
# Node graph scheduling


# A handler consumes one envelope and returns publications as
# (topic, t, payload) triples (or None).
Handler = Callable[[Envelope], "list[tuple[str, float, object]] | None"]


class Node:
    """Base class for graph nodes; subclasses register topic handlers."""

    name = "node"

    def handlers(self) -> dict[str, Handler]:
        raise NotImplementedError


@dataclass
class RunReport:
    frames: int = 0
    deliveries: int = 0
    dropped: int = 0
    published: dict = field(default_factory=dict)
    transcript_hash: str = ""


class GraphRunner:
    """Drives a node graph over a frame source in a total, replayable order."""

    FRAMES_TOPIC = "frames"

    def __init__(self, bus: MessageBus, nodes: Iterable[Node], mode: str = "deterministic"):
        if mode not in ("deterministic", "concurrent"):
            raise ValueError(f"unknown mode: {mode}")
        self.bus = bus
        self.nodes = list(nodes)
        self.mode = mode
        self.transcript: list[str] = []
        self._routes: list[tuple[Node, str, Handler, Subscription]] = []
        for node in self.nodes:
            for topic, handler in node.handlers().items():
                self._routes.append((node, topic, handler, bus.subscribe(topic)))

    def _collect(self, pending: dict) -> None:
        for node, topic, handler, sub in self._routes:
            for env in sub.pop_all():
                key = (env.t, self.bus.topic_rank(env.topic))
                pending.setdefault(key, []).append((node, handler, env))

    def _deliver(self, batch: list, frame_no: int) -> list[tuple[str, float, object]]:
        # Per node: envelopes in seq order. Across nodes: declared order.
        by_node: dict[int, list] = {}
        for node, handler, env in sorted(batch, key=lambda item: item[2].seq):
            by_node.setdefault(id(node), []).append((node, handler, env))
        ordered = [by_node[id(n)] for n in self.nodes if id(n) in by_node]
        for work in ordered:
            for node, handler, env in work:
                self.transcript.append(f"{env.seq} {env.topic} {env.t!r} {node.name}")

        def run_node(work) -> list[tuple[str, float, object]]:
            out: list[tuple[str, float, object]] = []
            for node, handler, env in work:
                try:
                    pubs = handler(env)
                except Exception as e:  # surface which node died and where
                    raise NodeError(f"node {node.name} failed at frame {frame_no}: {e}") from e
                if pubs:
                    out.extend(pubs)
            return out

        if self.mode == "concurrent" and len(ordered) > 1:
            with ThreadPoolExecutor(max_workers=len(ordered)) as pool:
                results = list(pool.map(run_node, ordered))
        else:
            results = [run_node(work) for work in ordered]
        publications: list[tuple[str, float, object]] = []
        for pubs in results:
            publications.extend(pubs)
        return publications

    def _drain(self, frame_no: int) -> None:
        pending: dict = {}
        self._collect(pending)
        while pending:
            batch = pending.pop(min(pending))
            for topic, t, payload in self._deliver(batch, frame_no):
                self.bus.publish(topic, payload, t)
            self._collect(pending)

    def run(self, frames: Iterable, transcript_path: str | Path | None = None) -> RunReport:
        """Process every frame to quiescence; returns delivery counters."""
        count = 0
        for fr in frames:
            count += 1
            self.bus.publish(self.FRAMES_TOPIC, fr, fr.t)
            self._drain(fr.frame)
        report = RunReport(
            frames=count,
            deliveries=self.bus.delivered,
            dropped=self.bus.dropped,
            published=dict(self.bus.published),
            transcript_hash=transcript_hash(self.transcript),
        )
        if transcript_path is not None:
            with open(transcript_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("\n".join(self.transcript) + ("\n" if self.transcript else ""))
        return report


def transcript_hash(lines: list[str]) -> str:
    digest = hashlib.sha256()
    for line in lines:
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def run_graph(
    bus: MessageBus,
    nodes: Iterable[Node],
    frames: Iterable,
    mode: str = "deterministic",
    transcript_path: str | Path | None = None,
) -> RunReport:
    """Convenience wrapper: build a runner and process all frames."""
    return GraphRunner(bus, nodes, mode=mode).run(frames, transcript_path=transcript_path)
