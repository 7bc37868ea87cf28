"""storewatch: deterministic retail customer-behavior analysis.

Replays (or synthesizes) tracked-person observation traces through a
layered publish/subscribe node graph, drives per-person state machines
(Idle / Approach / Pick / Leave), detects and classifies interaction
groups, writes transition and group logs, and aggregates them into
report tables and precision/recall evaluations.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    GroupType,
    ItemZone,
    Observation,
    PersonType,
    PipelineConfig,
    State,
    Vec3,
    validate_config,
)
