"""Deterministic discrete-event grid-world simulator and run metrics.

The simulation owns the ground truth: the occupancy grid, robot
positions, scripted reveals and the execution of the installed fleet
plan.  Robots depart for their next subtask as soon as the previous one
ends, move along 4-connected shortest paths, wait out any scheduled
slack and complete each subtask exactly at its planned end time, so a
valid plan executes exactly as scheduled.  Ticks are integer counts of a
fixed dt, which keeps runs bit-reproducible for identical scenarios and
seeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .events import (  # re-exported: the world speaks in these events
    Event,
    NewFeatureInstance,
    NewFeatureType,
    NewPriorityTaskInstance,
    NewTaskInstance,
    NewTaskType,
    RobotFailure,
    SubtaskStatusUpdate,
    event_from_obj,
    to_obj,
)
from .gridmap import Cell, GridMap, grid_from_obj
from .scheduler import FleetPlan, GroundedSubtask, RobotState, empty_plan
from .strategy import RobotSkill, RobotSpec

TICK_DT = 0.1
SENSING_RADIUS_CELLS = 3.0

__all__ = [
    "Event",
    "NewFeatureInstance",
    "NewFeatureType",
    "NewPriorityTaskInstance",
    "NewTaskInstance",
    "NewTaskType",
    "RobotFailure",
    "SubtaskStatusUpdate",
    "MetricsReport",
    "SchemaError",
    "Simulation",
    "load_scenario",
    "compute_metrics",
    "scenario_from_obj",
]


class SchemaError(Exception):
    pass


@dataclass(frozen=True)
class MetricsReport:
    success_rate: float
    spl: float
    plan_time_s: float
    plan_length: float
    tasks_completed: int

    def __post_init__(self):
        if not (0.0 <= self.success_rate <= 1.0):
            raise ValueError("success_rate out of range")
        if not (0.0 <= self.spl <= 1.0):
            raise ValueError("spl out of range")

    def to_obj(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "spl": self.spl,
            "plan_time_s": self.plan_time_s,
            "plan_length": self.plan_length,
            "tasks_completed": self.tasks_completed,
        }


@dataclass
class _Reveal:
    at_time: Optional[float]
    when_cell_explored: Optional[Cell]
    payload: Event
    fired: bool = False


@dataclass
class _RobotRun:
    anchor_time: float
    anchor_cell: Cell
    queue: list[GroundedSubtask] = field(default_factory=list)


class Simulation:
    def __init__(
        self,
        grid: GridMap,
        fleet: list[RobotState],
        reveals: list[_Reveal],
        gt: dict[str, int],
        horizon_s: float,
        seed: int,
        mission: Optional[dict] = None,
        mock_rules: Optional[dict] = None,
        task_locations: Optional[dict[str, Cell]] = None,
        dt: float = TICK_DT,
    ):
        self.grid = grid
        self.fleet = fleet
        self.reveals = reveals
        self.gt = dict(gt)
        self.horizon_s = horizon_s
        self.seed = seed
        self.mission = mission or {}
        self.mock_rules = mock_rules or {"rules": []}
        self.task_locations = dict(task_locations or {})
        self.dt = dt
        self.tick = 0
        self.plan: FleetPlan = empty_plan()
        self.completed: set[tuple[str, str, int]] = set()
        self.started: set[tuple[str, str, int]] = set()
        self.pending: list[Event] = []
        self._runs: dict[str, _RobotRun] = {
            r.spec.id: _RobotRun(r.available_at, r.location) for r in fleet
        }
        self._sense_all()

    # -- time ------------------------------------------------------------

    @property
    def t(self) -> float:
        return self.tick * self.dt

    # -- plan installation and robot motion ------------------------------

    def set_plan(self, plan: FleetPlan) -> None:
        """Install a plan; completed work stays, future queues are rebuilt."""
        self.plan = plan
        for robot in self.fleet:
            rid = robot.spec.id
            run = self._runs[rid]
            run.queue = [
                g
                for g in plan.plan_for(rid)
                if g.key not in self.completed
            ]

    def robot_cell(self, robot_id: str) -> Cell:
        """Ground-truth position at the current tick."""
        robot = self._robot(robot_id)
        run = self._runs[robot_id]
        if robot.failed or not run.queue:
            return run.anchor_cell
        nxt = run.queue[0]
        path = self.grid.shortest_path(run.anchor_cell, nxt.location)
        if path is None:
            return run.anchor_cell
        dist = robot.spec.velocity * max(0.0, self.t - run.anchor_time)
        steps = min(int(dist / self.grid.cell_m), len(path) - 1)
        return path[steps]

    def _robot(self, robot_id: str) -> RobotState:
        for r in self.fleet:
            if r.spec.id == robot_id:
                return r
        raise KeyError(robot_id)

    # -- core loop --------------------------------------------------------

    def step(self, dt: Optional[float] = None) -> list[Event]:
        """Advance one tick; returns this tick's events, timestamp-sorted."""
        ticks = 1 if dt is None else max(1, round(dt / self.dt))
        out: list[Event] = []
        for _ in range(ticks):
            self.tick += 1
            now = self.t
            events: list[Event] = []
            # completions: everything whose planned end has passed
            for robot in sorted(self.fleet, key=lambda r: r.spec.id):
                if robot.failed:
                    continue
                run = self._runs[robot.spec.id]
                while run.queue and run.queue[0].end <= now + 1e-9:
                    g = run.queue.pop(0)
                    self.completed.add(g.key)
                    run.anchor_time, run.anchor_cell = g.end, g.location
                    events.append(
                        SubtaskStatusUpdate(
                            timestamp=g.end,
                            robot_id=robot.spec.id,
                            task_id=g.task_id,
                            strategy_id=g.strategy_id,
                            index=g.index,
                            status="completed",
                            elapsed=g.end - g.start,
                            planned=g.end - g.start,
                        )
                    )
            self._sense_all()
            for reveal in self.reveals:
                if reveal.fired:
                    continue
                if reveal.at_time is not None and reveal.at_time <= now + 1e-9:
                    reveal.fired = True
                    events.append(reveal.payload)
                elif reveal.when_cell_explored is not None and self.grid.is_explored(
                    reveal.when_cell_explored
                ):
                    reveal.fired = True
                    events.append(reveal.payload)
            if self.pending:
                events.extend(self.pending)
                self.pending = []
            for event in events:
                if isinstance(event, RobotFailure):
                    self._robot(event.robot_id).failed = True
            events.sort(key=lambda e: (e.timestamp, e.kind, repr(e)))
            out.extend(events)
        return out

    def inject_event(self, event: Event) -> None:
        """Queue an external event for delivery on the next step."""
        self.pending.append(event)

    def _sense_all(self) -> None:
        if not self.grid.unknown:
            return
        radius = SENSING_RADIUS_CELLS
        newly = []
        for robot in self.fleet:
            if robot.failed:
                continue
            cx, cy = self.robot_cell(robot.spec.id)
            for (x, y) in list(self.grid.unknown):
                if math.dist((x, y), (cx, cy)) <= radius:
                    newly.append((x, y))
        if newly:
            self.grid.explore(newly)

    def all_plan_subtasks_done(self) -> bool:
        return all(
            g.key in self.completed for g in self.plan.all_subtasks()
        )

    def snapshot(self) -> dict:
        return {
            "t": self.t,
            "horizon_s": self.horizon_s,
            "seed": self.seed,
            "map": {
                "width": self.grid.width,
                "height": self.grid.height,
                "cell_m": self.grid.cell_m,
            },
            "robots": {
                r.spec.id: {
                    "cell": list(self.robot_cell(r.spec.id)),
                    "failed": r.failed,
                    "type": r.spec.robot_type,
                }
                for r in self.fleet
            },
            "completed_subtasks": sorted(
                [list(k) for k in self.completed]
            ),
            "reveals_pending": sum(1 for r in self.reveals if not r.fired),
        }


def scenario_from_obj(data: dict) -> Simulation:
    for key in ("map", "fleet", "script", "gt", "horizon_s", "seed"):
        if key not in data:
            raise SchemaError(f"scenario missing {key!r}")
    grid = grid_from_obj(data["map"])
    fleet = []
    for raw in data["fleet"]:
        try:
            spec = RobotSpec(
                raw["id"],
                raw["robot_type"],
                tuple(RobotSkill(s["name"], float(s["duration"])) for s in raw["skills"]),
                float(raw["velocity"]),
                raw.get("description", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad robot spec: {exc}")
        cell = tuple(raw.get("cell", (0, 0)))
        if not grid.is_free(cell) or not grid.is_explored(cell):
            raise SchemaError(f"robot {spec.id} starts on a blocked cell {cell}")
        fleet.append(RobotState(spec, cell))
    if not fleet:
        raise SchemaError("scenario fleet is empty")
    reveals = []
    for item in data["script"]:
        cond = item.get("reveal", {})
        payload = event_from_obj(item["payload"])
        reveals.append(
            _Reveal(
                at_time=cond.get("at_time"),
                when_cell_explored=(
                    tuple(cond["when_cell_explored"])
                    if "when_cell_explored" in cond
                    else None
                ),
                payload=payload,
            )
        )
        if reveals[-1].at_time is None and reveals[-1].when_cell_explored is None:
            raise SchemaError("reveal needs at_time or when_cell_explored")
    gt = {k: int(v) for k, v in data["gt"].items()}
    if any(v < 1 for v in gt.values()):
        raise SchemaError("ground-truth lengths must be >= 1")
    return Simulation(
        grid,
        fleet,
        reveals,
        gt,
        float(data["horizon_s"]),
        int(data["seed"]),
        mission=data.get("mission"),
        mock_rules=data.get("mock_rules"),
        task_locations={
            k: tuple(v) for k, v in data.get("task_locations", {}).items()
        },
    )


def load_scenario(path: str) -> Simulation:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except ValueError as exc:
            raise SchemaError(f"scenario is not valid JSON: {exc}")
    sim = scenario_from_obj(data)
    rules_file = data.get("mock_rules_file")
    if rules_file and not data.get("mock_rules"):
        import os

        with open(os.path.join(os.path.dirname(path), rules_file), "r") as fh:
            sim.mock_rules = json.load(fh)
    return sim


# ---------------------------------------------------------------------------
# metrics


def compute_metrics(records: list[dict], gt: dict[str, int]) -> MetricsReport:
    """Fold a run log into the report; the gt map gives per-type lengths.

    SR is the fraction of trials whose log shows at least one installed
    plan and no validation or planning failure.  SPL per task is
    gt_len / max(gt_len, generated_len) for completed tasks and 0 for
    revealed-but-unfinished ones.
    """
    trials = max(1, sum(1 for r in records if r.get("kind") == "run_started"))
    failures = sum(
        1
        for r in records
        if r.get("kind") in ("validation_failed", "pipeline_error", "plan_error")
    )
    plans = [r for r in records if r.get("kind") == "plan_installed"]
    valid_trials = trials if (plans and failures == 0) else trials - 1
    valid_trials = max(0, valid_trials)

    revealed: dict[str, str] = {}
    completed: dict[str, tuple[str, int]] = {}
    for r in records:
        if r.get("kind") == "task_added":
            revealed[r["task_id"]] = r["task_type"]
        elif r.get("kind") == "task_completed":
            completed[r["task_id"]] = (r["task_type"], int(r["length"]))

    spl_terms = []
    lengths = []
    for task_id, task_type in sorted(revealed.items()):
        done = completed.get(task_id)
        if done is None:
            spl_terms.append(0.0)
            continue
        _, gen_len = done
        gt_len = gt.get(task_type, gen_len)
        spl_terms.append(gt_len / max(gt_len, gen_len))
        lengths.append(gen_len)
    for task_id, (task_type, gen_len) in sorted(completed.items()):
        if task_id not in revealed:
            gt_len = gt.get(task_type, gen_len)
            spl_terms.append(gt_len / max(gt_len, gen_len))
            lengths.append(gen_len)

    times = [
        float(r["plan_time_s"]) for r in plans if "plan_time_s" in r
    ]
    return MetricsReport(
        success_rate=valid_trials / trials,
        spl=sum(spl_terms) / len(spl_terms) if spl_terms else 0.0,
        plan_time_s=sum(times) / len(times) if times else 0.0,
        plan_length=sum(lengths) / len(lengths) if lengths else 0.0,
        tasks_completed=len(completed),
    )
