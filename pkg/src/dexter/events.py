"""The seven online event classes driving adaptation.

Tagged union over dataclasses; every event carries a mission-clock
timestamp.  ``to_obj``/``event_from_obj`` give a stable JSON form used by
scenario scripts, the run log and the HTTP inject endpoint.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import ClassVar, Optional, Union

Cell = tuple[int, int]

NEW_TASK_INSTANCE = "new_task_instance"  # I
NEW_PRIORITY_TASK_INSTANCE = "new_priority_task_instance"  # II
NEW_TASK_TYPE = "new_task_type"  # III
NEW_FEATURE_TYPE = "new_feature_type"  # IV
NEW_FEATURE_INSTANCE = "new_feature_instance"  # V
SUBTASK_STATUS = "subtask_status"  # VI
ROBOT_FAILURE = "robot_failure"  # VII

EVENT_KINDS = (
    NEW_TASK_INSTANCE,
    NEW_PRIORITY_TASK_INSTANCE,
    NEW_TASK_TYPE,
    NEW_FEATURE_TYPE,
    NEW_FEATURE_INSTANCE,
    SUBTASK_STATUS,
    ROBOT_FAILURE,
)

# classes whose handling replans only (no mission or strategy re-generation)
SUBALL_ONLY_KINDS = frozenset(
    {NEW_TASK_INSTANCE, NEW_FEATURE_INSTANCE, SUBTASK_STATUS, ROBOT_FAILURE}
)


@dataclass(frozen=True)
class NewTaskInstance:
    kind: ClassVar[str] = NEW_TASK_INSTANCE
    timestamp: float
    task_type: str
    location: Cell
    instance_id: str


@dataclass(frozen=True)
class NewPriorityTaskInstance:
    kind: ClassVar[str] = NEW_PRIORITY_TASK_INSTANCE
    timestamp: float
    task_type: str
    priority_rank: int
    location: Cell
    instance_id: str


@dataclass(frozen=True)
class NewTaskType:
    kind: ClassVar[str] = NEW_TASK_TYPE
    timestamp: float
    task_type: str
    ltl: str  # mission fragment introducing the type
    propositions: tuple[tuple[str, str], ...]  # (name, "observation"|"skill")
    location: Cell
    instance_id: str


@dataclass(frozen=True)
class NewFeatureType:
    kind: ClassVar[str] = NEW_FEATURE_TYPE
    timestamp: float
    feature: str
    location: Cell
    station: bool = False


@dataclass(frozen=True)
class NewFeatureInstance:
    kind: ClassVar[str] = NEW_FEATURE_INSTANCE
    timestamp: float
    feature: str
    location: Cell
    station: bool = False


@dataclass(frozen=True)
class SubtaskStatusUpdate:
    kind: ClassVar[str] = SUBTASK_STATUS
    timestamp: float
    robot_id: str
    task_id: str
    strategy_id: str
    index: int
    status: str  # "started" | "completed" | "delayed"
    elapsed: Optional[float] = None
    planned: Optional[float] = None


@dataclass(frozen=True)
class RobotFailure:
    kind: ClassVar[str] = ROBOT_FAILURE
    timestamp: float
    robot_id: str


Event = Union[
    NewTaskInstance,
    NewPriorityTaskInstance,
    NewTaskType,
    NewFeatureType,
    NewFeatureInstance,
    SubtaskStatusUpdate,
    RobotFailure,
]

_BY_KIND = {
    cls.kind: cls
    for cls in (
        NewTaskInstance,
        NewPriorityTaskInstance,
        NewTaskType,
        NewFeatureType,
        NewFeatureInstance,
        SubtaskStatusUpdate,
        RobotFailure,
    )
}


def to_obj(event: Event) -> dict:
    obj = asdict(event)
    obj["kind"] = event.kind
    if "location" in obj:
        obj["location"] = list(obj["location"])
    if "propositions" in obj:
        obj["propositions"] = [list(p) for p in obj["propositions"]]
    return obj


def event_from_obj(obj: dict) -> Event:
    data = dict(obj)
    kind = data.pop("kind", None)
    cls = _BY_KIND.get(kind)
    if cls is None:
        raise ValueError(f"unknown event kind {kind!r}")
    if "location" in data:
        data["location"] = tuple(data["location"])
    if "propositions" in data:
        data["propositions"] = tuple(tuple(p) for p in data["propositions"])
    return cls(**data)
