"""Shared domain types and ground-plane geometry.

Coordinate conventions used everywhere in the package:

* 3D positions are in meters in the sensor frame; ``y`` is the vertical
  axis and the ground plane is spanned by ``(x, z)``.
* 2D boxes are in pixels with a top-left anchor.
* Head yaw is a ground-plane angle in radians; yaw 0 faces +x and the
  facing vector for yaw ``a`` is ``(cos a, sin a)`` in ``(x, z)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path


class ConfigError(ValueError):
    """A pipeline configuration value or file violates an invariant."""


class State(str, Enum):
    """Per-person behavior states: Idle, Approach, Pick, Leave."""

    IDLE = "I"
    APPROACH = "A"
    PICK = "P"
    LEAVE = "L"


# The only (prev, next) pairs a person machine may take within one epoch.
LEGAL_TRANSITIONS = frozenset(
    {
        (State.IDLE, State.APPROACH),
        (State.APPROACH, State.PICK),
        (State.PICK, State.PICK),
        (State.IDLE, State.LEAVE),
        (State.APPROACH, State.LEAVE),
        (State.PICK, State.LEAVE),
    }
)


class GroupType(str, Enum):
    L_SHAPE = "LShape"
    SIDE_BY_SIDE = "SideBySide"
    VIS_VIS = "VisVis"
    CIRCULAR = "Circular"


class PersonType(str, Enum):
    CUSTOMER = "customer"
    STAFF = "staff"


@dataclass(frozen=True)
class Vec3:
    """A point in meters; y vertical, ground plane (x, z)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite Vec3 components: ({self.x}, {self.y}, {self.z})")


@dataclass(frozen=True)
class BBox2D:
    """Pixel-space box, top-left anchored."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"BBox2D requires w > 0 and h > 0, got w={self.w}, h={self.h}")


def bbox_overlap(a: BBox2D, b: BBox2D) -> bool:
    """True iff the two boxes share a positive-area intersection."""
    return a.x < b.x + b.w and b.x < a.x + a.w and a.y < b.y + b.h and b.y < a.y + a.h


@dataclass(frozen=True)
class HeadPose:
    """Head orientation angles in radians."""

    yaw: float
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        if not (-math.pi <= self.yaw <= math.pi):
            raise ValueError(f"yaw out of [-pi, pi]: {self.yaw}")
        if not (-math.pi / 2 <= self.pitch <= math.pi / 2):
            raise ValueError(f"pitch out of [-pi/2, pi/2]: {self.pitch}")
        if not (-math.pi / 2 <= self.roll <= math.pi / 2):
            raise ValueError(f"roll out of [-pi/2, pi/2]: {self.roll}")


@dataclass(frozen=True)
class ArmKeypoints:
    """Optional wrist/elbow keypoints, meters in the sensor frame."""

    left_wrist: Vec3 | None = None
    right_wrist: Vec3 | None = None
    left_elbow: Vec3 | None = None
    right_elbow: Vec3 | None = None

    def wrists(self) -> tuple[Vec3, ...]:
        return tuple(w for w in (self.left_wrist, self.right_wrist) if w is not None)


@dataclass(frozen=True)
class Observation:
    """One person's perceived attributes in one frame."""

    t: float
    frame: int
    person_id: int
    person_type: PersonType
    bbox: BBox2D
    pos3d: Vec3
    head: HeadPose
    arms: ArmKeypoints | None = None
    picking_flag: bool | None = None
    held_item: int | None = None

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"observation t must be >= 0, got {self.t}")
        if self.person_id < 0:
            raise ValueError(f"person_id must be >= 0, got {self.person_id}")


@dataclass(frozen=True)
class ItemZone:
    """The monitored item table: a 3D reference point plus its image-space area.

    ``half_extent`` is the ground-plane half-size of the physical table
    rectangle and is only used by position reports; proximity tests use
    ``center3d`` and the image-space ``rect2d``.
    """

    zone_id: int
    center3d: Vec3
    rect2d: BBox2D
    half_extent: float
    item_ids: tuple[int, ...]

    def __post_init__(self):
        if not self.half_extent > 0:
            raise ValueError(f"half_extent must be > 0, got {self.half_extent}")
        if not self.item_ids:
            raise ValueError("item_ids must be non-empty")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable the pipeline consumes.

    Detection thresholds default to the grid-searched operating point;
    the remaining fields (pairing geometry, timeouts, clock) are artifact
    parameters with conservative defaults.
    """

    # Approach detection: window size, 3D distance gate, per-window counts.
    window_frames: int = 7
    approach_distance: float = 1.8
    approach_3d_count: int = 4
    approach_2d_count: int = 5
    # Pick detection: consecutive-picking streak and item-vote quota.
    pick_streak: int = 8
    pick_votes: int = 5
    # Leave detection: window size, 3D distance gate, per-window counts.
    leave_window: int = 5
    leave_distance: float = 4.0
    leave_3d_count: int = 5
    leave_2d_count: int = 4
    # Two-person group typing: effort-angle band edges.
    angle_low: float = math.pi / 3
    angle_high: float = 2 * math.pi / 3
    # Pairwise interaction geometry (shared o-space construction).
    pair_distance: float = 2.0
    stride: float = 0.8
    focus_eps: float = 0.8
    # Wrist-to-zone reach that counts as a picking gesture.
    pick_radius: float = 0.6
    # Seconds unseen before a tracked person is force-retired.
    absent_timeout: float = 3.0
    # Max |prediction - truth| time gap accepted by the evaluator.
    match_window: float = 5.0
    frame_rate: float = 10.0
    # Cadence of group generation, and the half-window used when joining
    # personal events to group ticks in reports.
    group_tick: float = 1.0
    group_join_window: float = 0.5
    seed: int = 0
    # Wall-clock instant corresponding to trace time 0 (ISO-8601).
    time_origin: str = "2021-05-31T09:00:00"

    def history_capacity(self) -> int:
        return max(self.window_frames, self.leave_window)


def _config_checks(cfg: PipelineConfig) -> list[tuple[bool, str]]:
    c = cfg
    return [
        (c.window_frames >= 1, "window_frames >= 1 violated"),
        (c.approach_3d_count >= 1, "approach_3d_count >= 1 violated"),
        (c.approach_2d_count >= 1, "approach_2d_count >= 1 violated"),
        (c.pick_streak >= 1, "pick_streak >= 1 violated"),
        (c.pick_votes >= 1, "pick_votes >= 1 violated"),
        (c.leave_window >= 1, "leave_window >= 1 violated"),
        (c.leave_3d_count >= 1, "leave_3d_count >= 1 violated"),
        (c.leave_2d_count >= 1, "leave_2d_count >= 1 violated"),
        (c.approach_3d_count <= c.window_frames, "approach_3d_count <= window_frames violated"),
        (c.approach_2d_count <= c.window_frames, "approach_2d_count <= window_frames violated"),
        (c.leave_3d_count <= c.leave_window, "leave_3d_count <= leave_window violated"),
        (c.leave_2d_count <= c.leave_window, "leave_2d_count <= leave_window violated"),
        (c.angle_low > 0, "angle_low > 0 violated"),
        (c.angle_low < c.angle_high, "angle_low < angle_high violated"),
        (c.angle_high < math.pi, "angle_high < pi violated"),
        (c.approach_distance > 0, "approach_distance > 0 violated"),
        (c.leave_distance > 0, "leave_distance > 0 violated"),
        (c.pair_distance > 0, "pair_distance > 0 violated"),
        (c.stride > 0, "stride > 0 violated"),
        (c.focus_eps > 0, "focus_eps > 0 violated"),
        (c.pick_radius > 0, "pick_radius > 0 violated"),
        (c.absent_timeout > 0, "absent_timeout > 0 violated"),
        (c.match_window > 0, "match_window > 0 violated"),
        (c.frame_rate > 0, "frame_rate > 0 violated"),
        (c.group_tick > 0, "group_tick > 0 violated"),
        (c.group_join_window >= 0, "group_join_window >= 0 violated"),
    ]


def validate_config(cfg: PipelineConfig) -> PipelineConfig:
    """Return ``cfg`` unchanged if valid, else raise naming the first violated invariant."""
    for ok, message in _config_checks(cfg):
        if not ok:
            raise ConfigError(message)
    return cfg


_CONFIG_FIELDS = None


def config_field_names() -> frozenset[str]:
    global _CONFIG_FIELDS
    if _CONFIG_FIELDS is None:
        _CONFIG_FIELDS = frozenset(f.name for f in fields(PipelineConfig))
    return _CONFIG_FIELDS


def config_from_dict(values: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    """Build a config from a plain dict; unknown keys are an error."""
    unknown = sorted(set(values) - config_field_names())
    if unknown:
        raise ConfigError(f"unknown config key: {unknown[0]}")
    cfg = replace(base or PipelineConfig(), **values)
    return validate_config(cfg)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(PipelineConfig)}


def load_config(path: str | Path, base: PipelineConfig | None = None) -> PipelineConfig:
    """Load a JSON config file with one key per PipelineConfig field."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            values = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid config file {path}: {e}") from e
    if not isinstance(values, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return config_from_dict(values, base=base)


def ground_distance(p: Vec3, zone: ItemZone) -> float:
    """Euclidean distance from ``p`` to the zone reference point in the ground plane."""
    c = zone.center3d
    return math.hypot(p.x - c.x, p.z - c.z)


def ground_distance_between(a: Vec3, b: Vec3) -> float:
    """Ground-plane distance between two positions."""
    return math.hypot(a.x - b.x, a.z - b.z)


def facing_vector(head: HeadPose) -> tuple[float, float]:
    """Unit ground-plane facing direction (x, z) for a head pose; yaw 0 faces +x."""
    return (math.cos(head.yaw), math.sin(head.yaw))


def effort_angle(u: tuple[float, float], v: tuple[float, float]) -> float:
    """Angle in [0, pi] between two unit ground-plane directions."""
    dot = u[0] * v[0] + u[1] * v[1]
    return math.acos(max(-1.0, min(1.0, dot)))
