"""Synthetic scene generation with exact ground truth.

Scripted agents move along waypoints (linear interpolation, no physics),
approach the item table, pick items, form groups, and leave. Every
scripted action emits a ground-truth event at its start time, and every
formation interval emits a ground-truth group, so a zero-noise trace
replayed through the pipeline must reproduce the ground truth exactly.

A lightweight orthographic pseudo-camera maps ground positions to pixel
boxes so the 2D overlap conditions stay consistent with 3D proximity:
100 px per meter, a fixed 40x80 person box, and a square zone area whose
reach defaults to the approach distance plus a margin.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ArmKeypoints,
    BBox2D,
    GroupType,
    HeadPose,
    ItemZone,
    Observation,
    PersonType,
    PipelineConfig,
    Vec3,
    ground_distance,
)
from .trace_io import GroundTruthEvent, GroundTruthGroup, TraceFrame


class ScenarioError(ValueError):
    """A scenario script is malformed or geometrically infeasible."""


# ---------------------------------------------------------------------------
# Pseudo-camera projection

PIXELS_PER_METER = 100.0
IMAGE_OFFSET = 500.0
PERSON_BOX_W = 40.0
PERSON_BOX_H = 80.0
# Extra reach (meters) of the zone's image-space area beyond the 3D
# approach distance; keeps 2D overlap implied by 3D nearness while a
# departure beyond the leave distance never overlaps.
ZONE_RECT_MARGIN = 0.6


def project_bbox(pos: Vec3) -> BBox2D:
    u = pos.x * PIXELS_PER_METER + IMAGE_OFFSET
    v = pos.z * PIXELS_PER_METER + IMAGE_OFFSET
    return BBox2D(u - PERSON_BOX_W / 2, v - PERSON_BOX_H / 2, PERSON_BOX_W, PERSON_BOX_H)


def zone_rect(center: Vec3, reach_m: float) -> BBox2D:
    half = reach_m * PIXELS_PER_METER
    cu = center.x * PIXELS_PER_METER + IMAGE_OFFSET
    cv = center.z * PIXELS_PER_METER + IMAGE_OFFSET
    return BBox2D(cu - half, cv - half, 2 * half, 2 * half)


# ---------------------------------------------------------------------------
# Scripts


@dataclass(frozen=True)
class ApproachZone:
    t: float


@dataclass(frozen=True)
class PickItem:
    t: float
    duration: float
    item_id: int


@dataclass(frozen=True)
class LeaveZone:
    t: float


@dataclass(frozen=True)
class FaceToward:
    t: float
    target: tuple[float, float] | int  # ground point (x, z) or another person id


@dataclass(frozen=True)
class JoinFormation:
    t_start: float
    t_end: float
    partners: tuple[int, ...]
    group_type: GroupType


@dataclass(frozen=True)
class Vanish:
    t_start: float
    t_end: float | None = None  # None = absent for the rest of the scene


Action = ApproachZone | PickItem | LeaveZone | FaceToward | JoinFormation | Vanish


@dataclass(frozen=True)
class AgentScript:
    person_id: int
    person_type: PersonType
    waypoints: tuple[tuple[float, Vec3], ...]
    actions: tuple[Action, ...] = ()

    def span(self) -> tuple[float, float]:
        return self.waypoints[0][0], self.waypoints[-1][0]


@dataclass(frozen=True)
class NoiseModel:
    """Observation-level perturbations standing in for perception error."""

    pos_sigma: float = 0.0
    yaw_sigma: float = 0.0
    dropout_prob: float = 0.0
    misclass_prob: float = 0.0
    type_flip_prob: float = 0.0

    def __post_init__(self):
        for name in ("dropout_prob", "misclass_prob", "type_flip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ScenarioError(f"{name} must be in [0, 1], got {p}")
        for name in ("pos_sigma", "yaw_sigma"):
            s = getattr(self, name)
            if s < 0:
                raise ScenarioError(f"{name} must be >= 0, got {s}")


@dataclass(frozen=True)
class ZoneSpec:
    zone_id: int
    center3d: Vec3
    half_extent: float
    item_ids: tuple[int, ...]
    rect_reach_m: float | None = None

    def make_zone(self, cfg: PipelineConfig) -> ItemZone:
        reach = self.rect_reach_m if self.rect_reach_m is not None else cfg.approach_distance + ZONE_RECT_MARGIN
        return ItemZone(
            zone_id=self.zone_id,
            center3d=self.center3d,
            rect2d=zone_rect(self.center3d, reach),
            half_extent=self.half_extent,
            item_ids=self.item_ids,
        )


@dataclass(frozen=True)
class Scenario:
    zone: ZoneSpec
    agents: tuple[AgentScript, ...]
    noise: NoiseModel = NoiseModel()
    seed: int = 0
    duration: float | None = None
    picking_mode: str = "explicit"
    config_overrides: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Scenario files


def _parse_action(raw: dict, where: str) -> Action:
    kind = raw.get("kind")
    try:
        if kind == "approach_zone":
            return ApproachZone(t=float(raw["t"]))
        if kind == "pick_item":
            return PickItem(t=float(raw["t"]), duration=float(raw["duration"]), item_id=int(raw["item_id"]))
        if kind == "leave_zone":
            return LeaveZone(t=float(raw["t"]))
        if kind == "face_toward":
            target = raw["target"]
            if isinstance(target, list):
                target = (float(target[0]), float(target[1]))
            else:
                target = int(target)
            return FaceToward(t=float(raw["t"]), target=target)
        if kind == "join_formation":
            return JoinFormation(
                t_start=float(raw["t_start"]),
                t_end=float(raw["t_end"]),
                partners=tuple(int(p) for p in raw["partners"]),
                group_type=GroupType(raw["group_type"]),
            )
        if kind == "vanish":
            t_end = raw.get("t_end")
            return Vanish(t_start=float(raw["t_start"]), t_end=None if t_end is None else float(t_end))
    except KeyError as e:
        raise ScenarioError(f"{where}: action {kind!r} missing field {e.args[0]}") from e
    raise ScenarioError(f"{where}: unknown action kind {kind!r}")


def load_scenario(path: str | Path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        zraw = raw["zone"]
        zone = ZoneSpec(
            zone_id=int(zraw.get("zone_id", 1)),
            center3d=Vec3(*(float(v) for v in zraw["center3d"])),
            half_extent=float(zraw.get("half_extent", 0.5)),
            item_ids=tuple(int(i) for i in zraw["item_ids"]),
            rect_reach_m=float(zraw["rect_reach_m"]) if "rect_reach_m" in zraw else None,
        )
        agents = []
        for araw in raw["agents"]:
            pid = int(araw["person_id"])
            waypoints = tuple(
                (float(w[0]), Vec3(float(w[1]), float(w[2]), float(w[3]))) for w in araw["waypoints"]
            )
            actions = tuple(_parse_action(a, f"agent {pid}") for a in araw.get("actions", []))
            agents.append(
                AgentScript(
                    person_id=pid,
                    person_type=PersonType(araw.get("person_type", "customer")),
                    waypoints=waypoints,
                    actions=actions,
                )
            )
    except KeyError as e:
        raise ScenarioError(f"scenario missing field {e.args[0]}") from e
    noise = NoiseModel(**raw.get("noise", {}))
    return Scenario(
        zone=zone,
        agents=tuple(agents),
        noise=noise,
        seed=int(raw.get("seed", 0)),
        duration=float(raw["duration"]) if raw.get("duration") is not None else None,
        picking_mode=raw.get("picking_mode", "explicit"),
        config_overrides=raw.get("config", {}),
    )


# ---------------------------------------------------------------------------
# Kinematics


def _interpolate(script: AgentScript, t: float) -> Vec3:
    times = [w[0] for w in script.waypoints]
    i = bisect_right(times, t)
    if i == 0:
        return script.waypoints[0][1]
    if i == len(times):
        return script.waypoints[-1][1]
    t0, p0 = script.waypoints[i - 1]
    t1, p1 = script.waypoints[i]
    if t1 == t0:
        return p1
    a = (t - t0) / (t1 - t0)
    return Vec3(p0.x + a * (p1.x - p0.x), p0.y + a * (p1.y - p0.y), p0.z + a * (p1.z - p0.z))


def _is_present(script: AgentScript, t: float) -> bool:
    t0, t1 = script.span()
    if not (t0 - 1e-9 <= t <= t1 + 1e-9):
        return False
    for action in script.actions:
        if isinstance(action, Vanish):
            end = math.inf if action.t_end is None else action.t_end
            if action.t_start - 1e-9 <= t < end - 1e-9:
                return False
    return True


def _yaw_toward(src: tuple[float, float], dst: tuple[float, float]) -> float:
    dx = dst[0] - src[0]
    dz = dst[1] - src[1]
    if dx == 0.0 and dz == 0.0:
        return 0.0
    return math.atan2(dz, dx)


# Pair members sit 1 m apart; facings per intended type keep the facing
# angle and the shared-space gap comfortably inside the detector bands.
_PAIR_OFFSETS = ((-0.5, 0.0), (0.5, 0.0))
_SIDE_BY_SIDE_FOCUS = (0.0, 2.0)  # shared focus 2 m ahead -> angle ~28 deg
_L_SHAPE_YAWS = (math.pi / 4, 3 * math.pi / 4)  # convergent corner, angle 90 deg


def formation_layout(group_type: GroupType, size: int) -> list[tuple[tuple[float, float], float]]:
    """Slot offsets from the anchor and facing yaw per member (sorted-id order)."""
    if size == 2:
        if group_type is GroupType.CIRCULAR:
            raise ScenarioError("Circular formation requires more than 2 members")
        if group_type is GroupType.VIS_VIS:
            return [(_PAIR_OFFSETS[0], 0.0), (_PAIR_OFFSETS[1], math.pi)]
        if group_type is GroupType.SIDE_BY_SIDE:
            return [
                (_PAIR_OFFSETS[0], _yaw_toward(_PAIR_OFFSETS[0], _SIDE_BY_SIDE_FOCUS)),
                (_PAIR_OFFSETS[1], _yaw_toward(_PAIR_OFFSETS[1], _SIDE_BY_SIDE_FOCUS)),
            ]
        return [(_PAIR_OFFSETS[0], _L_SHAPE_YAWS[0]), (_PAIR_OFFSETS[1], _L_SHAPE_YAWS[1])]
    if group_type is not GroupType.CIRCULAR:
        raise ScenarioError(f"{group_type.value} formation requires exactly 2 members")
    radius = 0.5 / math.sin(math.pi / size)  # adjacent members 1 m apart
    layout = []
    for i in range(size):
        angle = 2 * math.pi * i / size
        offset = (radius * math.cos(angle), radius * math.sin(angle))
        layout.append((offset, _yaw_toward(offset, (0.0, 0.0))))
    return layout


# ---------------------------------------------------------------------------
# Scene generation


def _validate_scripts(scripts, zone: ItemZone, cfg: PipelineConfig, frame_times, positions) -> None:
    ids = [s.person_id for s in scripts]
    if len(ids) != len(set(ids)):
        raise ScenarioError("agent person_ids must be disjoint")
    by_id = {s.person_id: s for s in scripts}
    for script in scripts:
        pid = script.person_id
        if not script.waypoints:
            raise ScenarioError(f"agent {pid}: waypoints must be non-empty")
        times = [w[0] for w in script.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ScenarioError(f"agent {pid}: waypoint times must be strictly increasing")
        t0, t1 = script.span()
        picks = [a for a in script.actions if isinstance(a, PickItem)]
        for a, b in zip(picks, picks[1:]):
            if b.t < a.t + a.duration:
                raise ScenarioError(f"agent {pid}: overlapping pick actions")
        formations = [a for a in script.actions if isinstance(a, JoinFormation)]
        for f in formations:
            members = {pid, *f.partners}
            if len(members) < 2:
                raise ScenarioError(f"agent {pid}: formation needs at least one partner")
            if (len(members) > 2) != (f.group_type is GroupType.CIRCULAR):
                raise ScenarioError(f"agent {pid}: formation type {f.group_type.value} does not fit {len(members)} members")
            for m in members:
                if m not in by_id:
                    raise ScenarioError(f"agent {pid}: formation partner {m} does not exist")
        scene_end = frame_times[-1] if frame_times else t1
        for action in script.actions:
            if isinstance(action, PickItem) and action.item_id not in zone.item_ids:
                raise ScenarioError(f"agent {pid}: pick item {action.item_id} is not in the zone")
            start = getattr(action, "t", getattr(action, "t_start", None))
            if start is not None and not (t0 - 1e-9 <= start <= scene_end + 1e-9):
                raise ScenarioError(f"agent {pid}: action at t={start} outside the scene [{t0}, {scene_end}]")
        # Geometry feasibility against the sampled clean trajectory.
        for action in script.actions:
            if isinstance(action, ApproachZone):
                if not any(
                    t >= action.t - 1e-9 and pid in positions[k] and ground_distance(positions[k][pid], zone) <= cfg.approach_distance
                    for k, t in enumerate(frame_times)
                ):
                    raise ScenarioError(
                        f"agent {pid}: approach at t={action.t} never comes within {cfg.approach_distance} m of the zone"
                    )
            if isinstance(action, LeaveZone):
                walks_out = any(
                    t >= action.t - 1e-9 and pid in positions[k] and ground_distance(positions[k][pid], zone) >= cfg.leave_distance
                    for k, t in enumerate(frame_times)
                )
                goes_absent = any(
                    t >= action.t - 1e-9 and pid not in positions[k] for k, t in enumerate(frame_times)
                )
                if not (walks_out or goes_absent):
                    raise ScenarioError(
                        f"agent {pid}: leave at t={action.t} never exceeds {cfg.leave_distance} m and never disappears"
                    )


def _active_formations(scripts, t: float):
    for script in scripts:
        for action in script.actions:
            if isinstance(action, JoinFormation) and action.t_start - 1e-9 <= t < action.t_end - 1e-9:
                yield script.person_id, action


def _facing_yaw(script: AgentScript, t: float, pos: Vec3, zone: ItemZone, base_positions) -> float:
    directive = None
    for action in script.actions:
        if isinstance(action, FaceToward) and action.t <= t + 1e-9:
            directive = action
    if directive is not None:
        if isinstance(directive.target, int):
            target_pos = base_positions.get(directive.target)
            if target_pos is not None:
                return _yaw_toward((pos.x, pos.z), (target_pos.x, target_pos.z))
        else:
            return _yaw_toward((pos.x, pos.z), directive.target)
    return _yaw_toward((pos.x, pos.z), (zone.center3d.x, zone.center3d.z))


def generate_scene(
    scripts,
    zone: ItemZone,
    cfg: PipelineConfig,
    noise: NoiseModel,
    seed: int,
    duration: float | None = None,
    picking_mode: str = "explicit",
) -> tuple[list[TraceFrame], list[GroundTruthEvent], list[GroundTruthGroup]]:
    """Sample a scene at the configured frame rate and return (trace, events, groups)."""
    scripts = sorted(scripts, key=lambda s: s.person_id)
    if picking_mode not in ("explicit", "arms"):
        raise ScenarioError(f"unknown picking_mode: {picking_mode}")
    if not scripts:
        return [], [], []
    start = min(s.span()[0] for s in scripts)
    end = max(s.span()[1] for s in scripts)
    if duration is not None:
        end = max(end, start + duration)
    k_start = round(start * cfg.frame_rate)
    k_end = round(end * cfg.frame_rate)
    frame_times = [k / cfg.frame_rate for k in range(k_start, k_end + 1)]

    # Clean kinematics per frame: interpolated positions with formation
    # overrides applied, plus facing overrides for formation members.
    positions: list[dict[int, Vec3]] = []
    yaws: list[dict[int, float]] = []
    for t in frame_times:
        base = {s.person_id: _interpolate(s, t) for s in scripts if _is_present(s, t)}
        final = dict(base)
        yaw_override: dict[int, float] = {}
        for owner, formation in _active_formations(scripts, t):
            members = sorted({owner, *formation.partners})
            if any(m not in base for m in members):
                continue
            anchor_x = sum(base[m].x for m in members) / len(members)
            anchor_z = sum(base[m].z for m in members) / len(members)
            layout = formation_layout(formation.group_type, len(members))
            for m, (offset, yaw) in zip(members, layout):
                final[m] = Vec3(anchor_x + offset[0], base[m].y, anchor_z + offset[1])
                yaw_override[m] = yaw
        positions.append(final)
        yaws.append(yaw_override)

    _validate_scripts(scripts, zone, cfg, frame_times, positions)

    frames: list[TraceFrame] = []
    for idx, (k, t) in enumerate(zip(range(k_start, k_end + 1), frame_times)):
        final = positions[idx]
        observations = []
        for script in scripts:
            pid = script.person_id
            if pid not in final:
                continue
            pos = final[pid]
            yaw = yaws[idx].get(pid)
            if yaw is None:
                yaw = _facing_yaw(script, t, pos, zone, final)
            pick = None
            for action in script.actions:
                if isinstance(action, PickItem):
                    pk0 = round(action.t * cfg.frame_rate)
                    pk1 = round((action.t + action.duration) * cfg.frame_rate)
                    if pk0 <= k < pk1:
                        pick = action
            arms = None
            picking_flag: bool | None = pick is not None
            held = pick.item_id if pick is not None else None
            if pick is not None:
                c = zone.center3d
                arms = ArmKeypoints(
                    left_wrist=Vec3(c.x + 0.1, c.y, c.z),
                    right_wrist=Vec3(c.x - 0.1, c.y, c.z),
                    left_elbow=Vec3((pos.x + c.x) / 2, c.y, (pos.z + c.z) / 2),
                    right_elbow=Vec3((pos.x + c.x) / 2, c.y, (pos.z + c.z) / 2),
                )
            if picking_mode == "arms":
                picking_flag = None
            observations.append(
                Observation(
                    t=t,
                    frame=k,
                    person_id=pid,
                    person_type=script.person_type,
                    bbox=project_bbox(pos),
                    pos3d=pos,
                    head=HeadPose(yaw=yaw),
                    arms=arms,
                    picking_flag=picking_flag,
                    held_item=held,
                )
            )
        frames.append(TraceFrame(t=t, frame=k, observations=tuple(observations)))

    events: list[GroundTruthEvent] = []
    groups: list[GroundTruthGroup] = []
    for script in scripts:
        for action in script.actions:
            if isinstance(action, ApproachZone):
                events.append(GroundTruthEvent(t=action.t, person_id=script.person_id, event="A"))
            elif isinstance(action, PickItem):
                events.append(
                    GroundTruthEvent(t=action.t, person_id=script.person_id, event="P", item_id=action.item_id)
                )
            elif isinstance(action, LeaveZone):
                events.append(GroundTruthEvent(t=action.t, person_id=script.person_id, event="L"))
            elif isinstance(action, JoinFormation):
                groups.append(
                    GroundTruthGroup(
                        t_start=action.t_start,
                        t_end=action.t_end,
                        member_ids=tuple(sorted({script.person_id, *action.partners})),
                        group_type=action.group_type,
                    )
                )
    events.sort(key=lambda e: (e.t, e.person_id))
    groups.sort(key=lambda g: (g.t_start, g.member_ids))

    frames = apply_noise(frames, noise, seed, item_pool=zone.item_ids)
    return frames, events, groups


def simulate_scenario(scenario: Scenario, cfg: PipelineConfig, seed: int | None = None):
    """Run generate_scene with the scenario's zone, noise, and options."""
    zone = scenario.zone.make_zone(cfg)
    return generate_scene(
        scenario.agents,
        zone,
        cfg,
        scenario.noise,
        scenario.seed if seed is None else seed,
        duration=scenario.duration,
        picking_mode=scenario.picking_mode,
    )


# ---------------------------------------------------------------------------
# Noise


def _wrap_angle(a: float) -> float:
    if -math.pi <= a <= math.pi:
        return a
    return ((a + math.pi) % (2 * math.pi)) - math.pi


def apply_noise(
    frames: list[TraceFrame],
    noise: NoiseModel,
    seed: int,
    item_pool: tuple[int, ...] | None = None,
) -> list[TraceFrame]:
    """Perturb a trace with a seeded generator; ground truth is untouched.

    Every observation consumes the same number of random draws, so a given
    (trace, seed) pair perturbs identically regardless of noise levels.
    """
    if item_pool is None:
        pool = sorted({o.held_item for fr in frames for o in fr.observations if o.held_item is not None})
    else:
        pool = sorted(item_pool)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    out: list[TraceFrame] = []
    for fr in frames:
        kept = []
        for obs in fr.observations:
            u_drop = rng.random()
            dpos = rng.normal(0.0, 1.0, 3)
            dyaw = rng.normal(0.0, 1.0)
            u_mis = rng.random()
            mis_idx = int(rng.integers(0, max(1, len(pool))))
            u_flip = rng.random()
            if u_drop < noise.dropout_prob:
                continue
            dx = noise.pos_sigma * float(dpos[0])
            dy = noise.pos_sigma * float(dpos[1])
            dz = noise.pos_sigma * float(dpos[2])
            pos = Vec3(obs.pos3d.x + dx, obs.pos3d.y + dy, obs.pos3d.z + dz)
            bbox = BBox2D(
                obs.bbox.x + dx * PIXELS_PER_METER,
                obs.bbox.y + dz * PIXELS_PER_METER,
                obs.bbox.w,
                obs.bbox.h,
            )
            head = HeadPose(
                yaw=_wrap_angle(obs.head.yaw + noise.yaw_sigma * float(dyaw)),
                pitch=obs.head.pitch,
                roll=obs.head.roll,
            )
            held = obs.held_item
            if held is not None and u_mis < noise.misclass_prob:
                others = [i for i in pool if i != held]
                if others:
                    held = others[mis_idx % len(others)]
            ptype = obs.person_type
            if u_flip < noise.type_flip_prob:
                ptype = PersonType.STAFF if ptype is PersonType.CUSTOMER else PersonType.CUSTOMER
            kept.append(
                Observation(
                    t=obs.t,
                    frame=obs.frame,
                    person_id=obs.person_id,
                    person_type=ptype,
                    bbox=bbox,
                    pos3d=pos,
                    head=head,
                    arms=obs.arms,
                    picking_flag=obs.picking_flag,
                    held_item=held,
                )
            )
        out.append(TraceFrame(t=fr.t, frame=fr.frame, observations=tuple(kept)))
    return out
