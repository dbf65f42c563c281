"""Event routing, verification checkpoints and the adaptation loop.

Each of the seven event classes maps to a fixed ordered module route;
replanning (SubAll) appears in every route, mission comprehension and
strategy generation only where the event demands them, which is what
keeps backend usage far below one call per event.  After every module a
verification checkpoint runs: in auto mode the stage validator decides,
in interactive mode the decision queue blocks the pipeline (the
simulation keeps ticking) until an operator answers or the timeout
falls back to the auto decision.  A rejected checkpoint rolls the whole
event handling back to the pre-event snapshot.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

from . import events as ev
from .ltl import parse_ltl
from .mission import (
    MissionSpec,
    PropositionBinding,
    TaskPoset,
    add_task_instance,
    build_task_poset,
    decompose_template,
    load_mission,
    poset_to_dot,
    validate_poset,
)
from .runlog import RunLog
from .scheduler import (
    CommittedSubtask,
    FleetPlan,
    Infeasible,
    NoFeasiblePlan,
    empty_plan,
    bnb_search,
    validate_plan,
)
from .strategy import (
    GenerationBackend,
    LayeredDag,
    MetaPolicy,
    PipelineError,
    SceneDescription,
    StrategyError,
    run_generation_pipeline,
    validate_strategy_for_fleet,
)
from .world import Simulation

DELAY_FACTOR = 1.5  # actual > factor * planned triggers replanning
CHECKPOINT_TIMEOUT_S = 30.0

MIS_COMP = "MisComp"
SUB_GEN = "SubGen"
SUB_ALL = "SubAll"
MAP_UPDATE = "MapUpdate"
MONITOR = "Monitor"

# the fixed multi-rate adaptation table: event class -> ordered modules;
# VI carries SubAll conditionally (only prolonged delays replan)
ADAPTATION_ROUTE = {
    ev.NEW_TASK_INSTANCE: (SUB_ALL,),
    ev.NEW_PRIORITY_TASK_INSTANCE: (MIS_COMP, SUB_ALL),
    ev.NEW_TASK_TYPE: (MIS_COMP, SUB_GEN, SUB_ALL),
    ev.NEW_FEATURE_TYPE: (SUB_GEN, SUB_ALL),
    ev.NEW_FEATURE_INSTANCE: (MAP_UPDATE, SUB_ALL),
    ev.SUBTASK_STATUS: (MONITOR, SUB_ALL),
    ev.ROBOT_FAILURE: (SUB_ALL,),
}


def is_delayed(event: ev.SubtaskStatusUpdate) -> bool:
    if event.status == "delayed":
        return True
    return (
        event.elapsed is not None
        and event.planned is not None
        and event.planned > 0
        and event.elapsed > DELAY_FACTOR * event.planned
    )


def route_event(event: ev.Event) -> list[str]:
    """The ordered module list the event triggers; pure function."""
    route = ADAPTATION_ROUTE[event.kind]
    if event.kind == ev.SUBTASK_STATUS and not is_delayed(event):
        return [MONITOR]
    return list(route)


@dataclass(frozen=True)
class TriggerStats:
    events_total: int
    counts: dict
    percentages: dict
    llm_call_count: int
    baseline_llm_call_count: int

    @property
    def llm_reduction(self) -> float:
        if self.baseline_llm_call_count == 0:
            return 0.0
        return 1.0 - self.llm_call_count / self.baseline_llm_call_count

    def to_obj(self) -> dict:
        return {
            "events_total": self.events_total,
            "counts": dict(sorted(self.counts.items())),
            "percentages": {k: round(v, 4) for k, v in sorted(self.percentages.items())},
            "llm_call_count": self.llm_call_count,
            "baseline_llm_call_count": self.baseline_llm_call_count,
            "llm_reduction": round(self.llm_reduction, 4),
        }


def _is_detection(event_obj: dict) -> bool:
    """On-time completion feedback is execution telemetry, not an
    adaptation trigger; delayed statuses and everything else count."""
    if event_obj.get("kind") != ev.SUBTASK_STATUS:
        return True
    if event_obj.get("status") == "delayed":
        return True
    elapsed, planned = event_obj.get("elapsed"), event_obj.get("planned")
    return bool(
        elapsed is not None and planned and elapsed > DELAY_FACTOR * planned
    )


def compute_trigger_stats(records: list[dict]) -> TriggerStats:
    """Per-module trigger counts over the logged adaptation events.

    Map updates are orchestrator-internal, so only MisComp, SubGen and
    SubAll are tallied; the baseline is one backend query per event.
    """
    event_count = sum(
        1
        for r in records
        if r.get("kind") == "event" and _is_detection(r.get("event", {}))
    )
    counts = {MIS_COMP: 0, SUB_GEN: 0, SUB_ALL: 0}
    for r in records:
        if r.get("kind") == "route":
            for module in r.get("modules", ()):
                if module in counts:
                    counts[module] += 1
    llm_calls = sum(1 for r in records if r.get("kind") == "llm_call")
    percentages = {
        k: (100.0 * v / event_count if event_count else 0.0)
        for k, v in counts.items()
    }
    return TriggerStats(event_count, counts, percentages, llm_calls, event_count)


@dataclass
class CheckpointRequest:
    checkpoint_id: int
    stage: str  # poset | layered | plan | execution
    artifact: dict
    violations: list[str]
    mode: str
    decision: Optional[str] = None  # approved | edited | rejected
    edited_artifact: Optional[dict] = None
    reason: str = ""
    operator: str = ""


class RollbackSignal(Exception):
    """A checkpoint rejected the artifact; unwind to the event snapshot."""

    def __init__(self, stage: str, reason: str):
        super().__init__(f"checkpoint {stage!r} rejected: {reason}")
        self.stage = stage
        self.reason = reason


@dataclass
class OrchestratorConfig:
    mode: str = "auto"  # auto | interactive
    checkpoint_timeout_s: float = CHECKPOINT_TIMEOUT_S
    time_budget_s: Optional[float] = None
    paper_lb: bool = False
    record_timings: bool = False


class Orchestrator:
    """Owns all mutable planning state; one adaptation pipeline at a time."""

    def __init__(
        self,
        sim: Simulation,
        backend: GenerationBackend,
        config: Optional[OrchestratorConfig] = None,
        log: Optional[RunLog] = None,
    ):
        self.sim = sim
        self.backend = backend
        self.cfg = config or OrchestratorConfig()
        self.log = log or RunLog()
        self.spec: MissionSpec = load_mission(sim.mission)
        self.poset: TaskPoset = TaskPoset()
        self.layered = LayeredDag()
        self.policy = MetaPolicy()
        self.plan: FleetPlan = empty_plan()
        self.locations: dict[str, tuple[int, int]] = dict(sim.task_locations)
        self.history: list[tuple[float, str]] = []
        self.completed_keys: set[tuple[str, str, int]] = set()
        self.tasks_done: set[str] = set()
        self._event_queue: list[ev.Event] = []
        self._checkpoint_seq = 0
        self.pending_checkpoint: Optional[CheckpointRequest] = None
        self._decision_ready: Optional[Callable[[], Optional[dict]]] = None
        self._drain_hook: Optional[Callable[[], None]] = None
        self._tick_while_blocked: bool = True
        self._started = False
        self._failed = False

    # -- logging helpers ---------------------------------------------------

    def _log(self, kind: str, **payload) -> dict:
        return self.log.append(kind, self.sim.t, **payload)

    @staticmethod
    def _hash(obj) -> str:
        return hashlib.sha256(
            json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()[:16]

    # -- checkpoints ---------------------------------------------------------

    def _validator(self, stage: str, artifact) -> list[str]:
        if stage == "poset":
            return [str(v) for v in validate_poset(artifact)]
        if stage == "layered":
            problems = []
            for task_type, dags in sorted(artifact.strategies.items()):
                for dag in dags:
                    problems.extend(validate_strategy_for_fleet(dag, [r.spec for r in self.sim.fleet]))
            missing = [
                n.task_type
                for n in self.poset.tasks
                if not artifact.for_type(n.task_type)
            ]
            problems.extend(f"no strategy for task type {t!r}" for t in sorted(set(missing)))
            return problems
        if stage == "plan":
            fleet = self.sim.fleet
            return [
                str(v)
                for v in validate_plan(
                    artifact,
                    self.poset,
                    self.layered,
                    fleet,
                    self.sim.grid,
                    self.locations,
                    committed=self._committed(),
                )
            ]
        return []  # execution status checkpoints carry no validator

    def _artifact_obj(self, stage: str, artifact) -> dict:
        if stage == "poset":
            return {"dot": poset_to_dot(artifact), "tasks": len(artifact.tasks)}
        if stage == "layered":
            return artifact.to_obj()
        if stage == "plan":
            return artifact.to_obj()
        return dict(artifact) if isinstance(artifact, dict) else {"value": str(artifact)}

    def checkpoint(self, stage: str, artifact, timeout_s: Optional[float] = None):
        """Verify an artifact; returns (decision, artifact possibly edited)."""
        violations = self._validator(stage, artifact)
        auto_decision = "approved" if not violations else "rejected"
        self._checkpoint_seq += 1
        request = CheckpointRequest(
            checkpoint_id=self._checkpoint_seq,
            stage=stage,
            artifact=self._artifact_obj(stage, artifact),
            violations=violations,
            mode=self.cfg.mode,
        )
        if self.cfg.mode == "interactive" and self._decision_ready is not None:
            self.pending_checkpoint = request
            self._log(
                "checkpoint_pending",
                checkpoint_id=request.checkpoint_id,
                stage=stage,
                violations=violations,
            )
            deadline = time.monotonic() + (
                timeout_s if timeout_s is not None else self.cfg.checkpoint_timeout_s
            )
            decision_payload = None
            while time.monotonic() < deadline:
                # consume any posted decision before serving reads, so a
                # client can never observe a checkpoint it already answered
                decision_payload = self._decision_ready()
                if decision_payload is not None:
                    break
                if self._drain_hook is not None:
                    self._drain_hook()
                if self._tick_while_blocked:
                    self._event_queue.extend(self.sim.step())
                time.sleep(0.01)
            self.pending_checkpoint = None
            if decision_payload is None:
                self._log(
                    "checkpoint",
                    checkpoint_id=request.checkpoint_id,
                    stage=stage,
                    decision=auto_decision,
                    auto_fallback=True,
                    violations=violations,
                )
                if auto_decision == "rejected":
                    raise RollbackSignal(stage, "; ".join(violations))
                return "approved", artifact
            decision = decision_payload.get("decision", "rejected")
            operator = decision_payload.get("operator", "")
            if decision == "edited":
                edited = decision_payload.get("artifact")
                try:
                    artifact = self._apply_edit(stage, artifact, edited)
                except StrategyError as exc:
                    self._log(
                        "checkpoint",
                        checkpoint_id=request.checkpoint_id,
                        stage=stage,
                        decision="rejected",
                        operator=operator,
                        violations=[str(exc)],
                    )
                    raise RollbackSignal(stage, f"edit does not parse: {exc}")
                violations = self._validator(stage, artifact)
                if violations:
                    self._log(
                        "checkpoint",
                        checkpoint_id=request.checkpoint_id,
                        stage=stage,
                        decision="rejected",
                        operator=operator,
                        violations=violations,
                    )
                    raise RollbackSignal(stage, "edited artifact still invalid")
                self._log(
                    "checkpoint",
                    checkpoint_id=request.checkpoint_id,
                    stage=stage,
                    decision="edited",
                    operator=operator,
                    violations=[],
                )
                return "edited", artifact
            self._log(
                "checkpoint",
                checkpoint_id=request.checkpoint_id,
                stage=stage,
                decision=decision,
                operator=operator,
                violations=violations,
            )
            if decision == "rejected":
                raise RollbackSignal(stage, decision_payload.get("reason", "rejected"))
            return decision, artifact
        # auto mode decides straight from the validator
        self._log(
            "checkpoint",
            checkpoint_id=request.checkpoint_id,
            stage=stage,
            decision=auto_decision,
            violations=violations,
        )
        if auto_decision == "rejected":
            raise RollbackSignal(stage, "; ".join(violations))
        return "approved", artifact

    def _apply_edit(self, stage: str, artifact, edited):
        if edited is None:
            return artifact
        if stage == "layered":
            from .strategy import parse_strategy_obj

            rebuilt = LayeredDag()
            for task_type, dags in edited.items():
                for raw in dags:
                    rebuilt.add(parse_strategy_obj(raw))
            return rebuilt
        return artifact  # poset/plan edits arrive as full replacements upstream

    # -- state snapshot / rollback -----------------------------------------

    def _snapshot(self):
        return {
            "spec": self.spec,
            "poset": self.poset,
            "layered": self.layered.copy(),
            "policy": self.policy,
            "plan": self.plan,
            "locations": dict(self.locations),
            "grid": self.sim.grid.copy(),
            "history": list(self.history),
            "tasks_done": set(self.tasks_done),
            "fleet_failed": {r.spec.id: r.failed for r in self.sim.fleet},
        }

    def _restore(self, snap) -> None:
        self.spec = snap["spec"]
        self.poset = snap["poset"]
        self.layered = snap["layered"]
        self.policy = snap["policy"]
        self.plan = snap["plan"]
        self.locations = snap["locations"]
        self.sim.grid = snap["grid"]
        self.history = snap["history"]
        self.tasks_done = snap["tasks_done"]
        for r in self.sim.fleet:
            r.failed = snap["fleet_failed"][r.spec.id]

    # -- module executions ---------------------------------------------------

    def _resources(self) -> tuple[str, ...]:
        return tuple(sorted(self.sim.grid.features.keys()))

    def _scene(self, task_types: list[str]) -> SceneDescription:
        return SceneDescription(
            tasks=tuple(sorted(set(task_types))),
            resources=self._resources(),
            history=tuple(self.history[-20:]),
        )

    def _run_pipeline(self, task_types: list[str]) -> None:
        scene = self._scene(task_types)
        trace: list = []
        t0 = time.perf_counter()
        delta, policy = run_generation_pipeline(
            scene,
            [r.spec for r in self.sim.fleet],
            self.policy,
            self.backend,
            trace=trace,
        )
        self.policy = policy
        added = {}
        merged = self.layered.copy()  # swap wholesale: readers see old or new
        for task_type, dags in sorted(delta.items()):
            for dag in dags:
                if merged.add(dag):
                    added.setdefault(task_type, []).append(dag.strategy_id)
        self.layered = merged
        payload = {
            "stages": [t["stage"] for t in trace],
            "prompt_hashes": [h for t in trace for h in t.get("prompts", [])],
            "added": added,
            "policy_version": policy.version,
        }
        if self.cfg.record_timings:
            payload["wall_s"] = round(time.perf_counter() - t0, 6)
        self._log("llm_call", **payload)

    def _committed(self) -> tuple[CommittedSubtask, ...]:
        now = self.sim.t
        failed = {r.spec.id for r in self.sim.fleet if r.failed}
        out = []
        for g in self.plan.all_subtasks():
            # plan-time completion is authoritative in the deterministic
            # sim, so an ended subtask of a live robot counts as done even
            # when its status event sits later in this tick's batch
            done = g.key in self.completed_keys or (
                g.end <= now + 1e-9 and g.robot_id not in failed
            )
            in_flight = (
                g.start <= now + 1e-9 and g.end > now + 1e-9 and g.robot_id not in failed
            )
            if done or in_flight:
                out.append(
                    CommittedSubtask(
                        g.task_id, g.strategy_id, g.index, g.action,
                        g.robot_id, g.start, g.end, g.location,
                    )
                )
        return tuple(sorted(out, key=lambda c: (c.start, c.key)))

    def _refresh_fleet(self) -> None:
        now = self.sim.t
        busy: dict[str, CommittedSubtask] = {}
        for c in self._committed():
            cur = busy.get(c.robot_id)
            if cur is None or c.end > cur.end:
                busy[c.robot_id] = c
        for r in self.sim.fleet:
            c = busy.get(r.spec.id)
            if c is not None and c.end > now:
                r.available_at = c.end
                r.location = c.cell
            else:
                r.available_at = now
                r.location = self.sim.robot_cell(r.spec.id)

    def _replan(self) -> None:
        if not self.layered.covers({n.task_type for n in self.poset.tasks}):
            missing = sorted(
                n.task_type
                for n in self.poset.tasks
                if not self.layered.for_type(n.task_type)
            )
            raise PipelineError(
                "coverage", Infeasible(f"no strategies for {missing}")
            )
        self._refresh_fleet()
        committed = self._committed()
        t0 = time.perf_counter()
        plan = bnb_search(
            self.poset,
            self.layered,
            self.sim.fleet,
            self.sim.grid,
            self.locations,
            time_budget_s=self.cfg.time_budget_s,
            committed=committed,
            paper_lb=self.cfg.paper_lb,
        )
        _, plan = self.checkpoint("plan", plan)
        self.plan = plan
        self.sim.set_plan(plan)
        payload = {
            "makespan_s": round(plan.makespan, 9),
            "optimal": plan.optimal,
            "nodes_expanded": plan.nodes_expanded,
            "plan_hash": self._hash(plan.to_obj()),
            "subtasks": len(plan.all_subtasks()),
        }
        if self.cfg.record_timings:
            payload["plan_time_s"] = round(time.perf_counter() - t0, 6)
        self._log("plan_installed", **payload)

    def _add_task(self, task_type: str, rank, location, source: str) -> str:
        self.poset = add_task_instance(self.poset, task_type, rank, source)
        task_id = self.poset.tasks[-1].id
        self.locations[task_id] = tuple(location)
        self._log(
            "task_added",
            task_id=task_id,
            task_type=task_type,
            priority_rank=rank,
            location=list(location),
        )
        return task_id

    def _merge_mission_fragment(self, event: ev.NewTaskType) -> None:
        fragment = decompose_template(parse_ltl(event.ltl))
        bindings = dict(self.spec.propositions)
        for entry in event.propositions:
            name, kind = entry[0], entry[1]
            task_type = entry[2] if len(entry) > 2 and entry[2] else None
            bindings[name] = PropositionBinding(kind, task_type)
        offset = len(self.spec.reactions)
        renumbered = tuple(
            replace(r, event_id=f"e{offset + i + 1}")
            for i, r in enumerate(fragment.reactions)
        )
        self.spec = replace(
            self.spec,
            reactions=self.spec.reactions + renumbered,
            propositions=bindings,
        )
        known = frozenset(
            b.task_type for b in bindings.values() if b.kind == "skill"
        )
        self.poset = replace(self.poset, known_types=self.poset.known_types | known)

    # -- the event pipeline ---------------------------------------------------

    def handle_event(self, event: ev.Event) -> None:
        """Route one event through its modules with checkpoints and rollback."""
        modules = route_event(event)
        self._log("event", event=ev.to_obj(event))
        self.history.append((event.timestamp, f"{event.kind}"))
        snapshot = self._snapshot()
        executed: list[str] = []
        llm_calls_before = len(self.log.of_kind("llm_call"))
        try:
            skip_rest = False
            for module in modules:
                if skip_rest:
                    break
                if module == MIS_COMP:
                    self._exec_mis_comp(event)
                elif module == SUB_GEN:
                    self._exec_sub_gen(event)
                elif module == MAP_UPDATE:
                    if not self._exec_map_update(event):
                        skip_rest = True  # duplicate instance: no-op event
                        continue
                elif module == MONITOR:
                    self._exec_monitor(event)
                elif module == SUB_ALL:
                    self._prepare_sub_all(event)
                    self._replan()
                executed.append(module)
            self._log("route", event_kind=event.kind, modules=executed)
        except RollbackSignal as sig:
            self._restore(snapshot)
            self.sim.set_plan(self.plan)
            self._log(
                "rollback", stage=sig.stage, reason=sig.reason, event_kind=event.kind
            )
            self._log("route", event_kind=event.kind, modules=executed)
            return
        except (PipelineError, NoFeasiblePlan, Infeasible) as exc:
            self._restore(snapshot)
            self.sim.set_plan(self.plan)
            self._log("pipeline_error", error=str(exc), event_kind=event.kind)
            self._log("route", event_kind=event.kind, modules=executed)
            return
        # backend economy: at most one generation run, and only for routes
        # that include strategy generation
        llm_calls = len(self.log.of_kind("llm_call")) - llm_calls_before
        assert llm_calls <= (1 if SUB_GEN in modules else 0)

    def _exec_mis_comp(self, event: ev.Event) -> None:
        self._log("module_triggered", module=MIS_COMP, event_kind=event.kind)
        if event.kind == ev.NEW_PRIORITY_TASK_INSTANCE:
            self._add_task(
                event.task_type, event.priority_rank, event.location, event.kind
            )
            # reuse an existing node of the same type instead of calling
            # the backend: copy the lowest-id strategy
            options = self.layered.for_type(event.task_type)
            if options:
                chosen = sorted(options, key=lambda d: d.strategy_id)[0]
                self._log(
                    "strategy_replicated",
                    task_type=event.task_type,
                    strategy_id=chosen.strategy_id,
                )
        elif event.kind == ev.NEW_TASK_TYPE:
            self._merge_mission_fragment(event)
            self._add_task(event.task_type, None, event.location, event.kind)
        _, self.poset = self.checkpoint("poset", self.poset)

    def _exec_sub_gen(self, event: ev.Event) -> None:
        self._log("module_triggered", module=SUB_GEN, event_kind=event.kind)
        if event.kind == ev.NEW_FEATURE_TYPE:
            if self.sim.grid.add_feature(event.feature, tuple(event.location)):
                self._log(
                    "map_updated",
                    feature=event.feature,
                    location=list(event.location),
                    station=False,
                )
        task_types = sorted({n.task_type for n in self.poset.tasks})
        if event.kind == ev.NEW_TASK_TYPE:
            task_types = sorted(set(task_types) | {event.task_type})
        if task_types:
            self._run_pipeline(task_types)
        _, self.layered = self.checkpoint("layered", self.layered)

    def _exec_map_update(self, event: ev.Event) -> bool:
        if event.station:
            added = self.sim.grid.add_station(event.feature, tuple(event.location))
        else:
            added = self.sim.grid.add_feature(event.feature, tuple(event.location))
        if not added:
            self._log(
                "map_duplicate", feature=event.feature, location=list(event.location)
            )
            return False
        self._log(
            "map_updated",
            feature=event.feature,
            location=list(event.location),
            station=event.station,
        )
        return True

    def _exec_monitor(self, event: ev.SubtaskStatusUpdate) -> None:
        self._log("module_triggered", module=MONITOR, event_kind=event.kind)
        if event.status in ("completed", "delayed"):
            key = (event.task_id, event.strategy_id, event.index)
            if event.status == "completed":
                self.completed_keys.add(key)
                self._maybe_complete_task(event.task_id, event.strategy_id)
        self._log(
            "execution_status",
            task_id=event.task_id,
            index=event.index,
            status=event.status,
            delayed=is_delayed(event),
        )
        self.checkpoint("execution", {"task_id": event.task_id, "status": event.status})

    def _maybe_complete_task(self, task_id: str, strategy_id: str) -> None:
        if task_id in self.tasks_done:
            return
        try:
            strategy = self.layered.strategy(strategy_id)
        except KeyError:
            return
        keys = {(task_id, strategy_id, s.index) for s in strategy.subtasks}
        if keys <= self.completed_keys:
            self.tasks_done.add(task_id)
            node = self.poset.node(task_id)
            self._log(
                "task_completed",
                task_id=task_id,
                task_type=node.task_type,
                strategy_id=strategy_id,
                length=len(strategy.subtasks),
            )

    def _prepare_sub_all(self, event: ev.Event) -> None:
        self._log("module_triggered", module=SUB_ALL, event_kind=event.kind)
        if event.kind == ev.NEW_TASK_INSTANCE:
            # plain instances inherit the type's declared priority rank
            rank = self.spec.default_rank(event.task_type)
            self._add_task(event.task_type, rank, event.location, event.kind)
        elif event.kind == ev.ROBOT_FAILURE:
            for r in self.sim.fleet:
                if r.spec.id == event.robot_id:
                    r.failed = True
                    self._log("robot_failed", robot_id=event.robot_id)

    # -- run loop ---------------------------------------------------------

    def start(self) -> None:
        """Initial comprehension, generation and scheduling pass."""
        if self._started:
            return
        self._started = True
        self._log(
            "run_started",
            seed=self.sim.seed,
            mode=self.cfg.mode,
            backend=self.backend.name,
            mission_hash=self._hash(self.sim.mission),
        )
        try:
            self.poset = build_task_poset(self.spec, [])
            for node in self.poset.tasks:
                self._log(
                    "task_added",
                    task_id=node.id,
                    task_type=node.task_type,
                    priority_rank=node.priority_rank,
                    location=list(self.locations.get(node.id, (0, 0))),
                )
            self._log("module_triggered", module=MIS_COMP, event_kind="initial")
            _, self.poset = self.checkpoint("poset", self.poset)
            # generate for every declared skill type up front: later
            # instances of known types then need assignment only, no
            # backend round-trip
            task_types = sorted(set(self.spec.skill_types()))
            if task_types:
                self._log("module_triggered", module=SUB_GEN, event_kind="initial")
                self._run_pipeline(task_types)
                _, self.layered = self.checkpoint("layered", self.layered)
            self._log("module_triggered", module=SUB_ALL, event_kind="initial")
            self._replan()
        except RollbackSignal as sig:
            self._failed = True
            self._log("rollback", stage=sig.stage, reason=sig.reason,
                      event_kind="initial")
        except (PipelineError, NoFeasiblePlan, Infeasible) as exc:
            self._failed = True
            self._log("pipeline_error", error=str(exc), event_kind="initial")

    def inject(self, event: ev.Event) -> None:
        """External injection: logged so a replay can re-create it."""
        self._log("event_injected", event=ev.to_obj(event))
        self.sim.inject_event(event)

    def run(self, max_ticks: Optional[int] = None) -> None:
        """Drive the simulation to the horizon or mission completion."""
        self.start()
        ticks = 0
        while not self._failed and self.sim.t < self.sim.horizon_s:
            if max_ticks is not None and ticks >= max_ticks:
                break
            if self._drain_hook is not None:
                self._drain_hook()
            self._event_queue.extend(self.sim.step())
            ticks += 1
            while self._event_queue:
                event = self._event_queue.pop(0)
                self.handle_event(event)
            if self._mission_complete():
                break
        self._log(
            "run_finished",
            tasks_completed=len(self.tasks_done),
            sim_t=self.sim.t,
        )

    def _mission_complete(self) -> bool:
        if any(not r.fired for r in self.sim.reveals):
            return False
        if self._event_queue or self.sim.pending:
            return False
        return all(n.id in self.tasks_done for n in self.poset.tasks)

    # -- views ---------------------------------------------------------------

    def state_obj(self) -> dict:
        snap = self.sim.snapshot()
        snap.update(
            {
                "tasks_done": sorted(self.tasks_done),
                "policy_version": self.policy.version,
                "plan_makespan": self.plan.makespan,
                "pending_checkpoint": (
                    self.pending_checkpoint.checkpoint_id
                    if self.pending_checkpoint
                    else None
                ),
            }
        )
        return snap

    def poset_obj(self) -> dict:
        return {
            "tasks": [
                {
                    "id": n.id,
                    "task_type": n.task_type,
                    "priority_rank": n.priority_rank,
                    "source_event": n.source_event,
                    "done": n.id in self.tasks_done,
                }
                for n in self.poset.tasks
            ],
            "precedence": sorted([list(e) for e in self.poset.precedence]),
            "exclusion": sorted([sorted(p) for p in self.poset.exclusion]),
            "dot": poset_to_dot(self.poset),
        }


def replay_events(
    scenario_obj: dict,
    records: list[dict],
    backend: GenerationBackend,
    config: Optional[OrchestratorConfig] = None,
) -> "Orchestrator":
    """Re-run a logged run: scripted events replay from the scenario and
    externally injected ones are re-injected at their recorded ticks."""
    from .world import scenario_from_obj

    sim = scenario_from_obj(scenario_obj)
    orch = Orchestrator(sim, backend, config or OrchestratorConfig())
    injections = [
        (round(r["t"] / sim.dt), r["event"])
        for r in records
        if r["kind"] == "event_injected"
    ]
    injections.sort(key=lambda pair: pair[0])
    orch.start()
    idx = 0
    while sim.t < sim.horizon_s:
        while idx < len(injections) and injections[idx][0] <= sim.tick:
            orch.inject(ev.event_from_obj(injections[idx][1]))
            idx += 1
        orch._event_queue.extend(sim.step())
        while orch._event_queue:
            orch.handle_event(orch._event_queue.pop(0))
        if idx >= len(injections) and orch._mission_complete():
            break
    orch._log("run_finished", tasks_completed=len(orch.tasks_done), sim_t=sim.t)
    return orch
