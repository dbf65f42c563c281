import copy
import json

import pytest

from dexter.events import (
    EVENT_KINDS,
    NewFeatureInstance,
    NewFeatureType,
    NewPriorityTaskInstance,
    NewTaskInstance,
    NewTaskType,
    RobotFailure,
    SubtaskStatusUpdate,
)
from dexter.orchestrator import (
    MIS_COMP,
    MONITOR,
    SUB_ALL,
    SUB_GEN,
    MAP_UPDATE,
    Orchestrator,
    OrchestratorConfig,
    compute_trigger_stats,
    replay_events,
    route_event,
)
from dexter.strategy import mock_backend
from dexter.world import compute_metrics, scenario_from_obj
from statsfix import build_stats_scenario


def scenario1() -> dict:
    with open("fixtures/scenario1.json") as fh:
        return json.load(fh)


def timeline() -> dict:
    with open("fixtures/timeline.json") as fh:
        return json.load(fh)


def make_orchestrator(data, **cfg):
    sim = scenario_from_obj(data)
    backend = mock_backend(sim.mock_rules)
    return Orchestrator(sim, backend, OrchestratorConfig(**cfg))


class TestRouteEvent:
    def test_all_seven_routes_match_table(self):
        cases = {
            NewTaskInstance(0.0, "t", (0, 0), "i"): [SUB_ALL],
            NewPriorityTaskInstance(0.0, "t", 0, (0, 0), "i"): [MIS_COMP, SUB_ALL],
            NewTaskType(0.0, "t", "F a", (("a", "skill", "t"),), (0, 0), "i"): [
                MIS_COMP, SUB_GEN, SUB_ALL,
            ],
            NewFeatureType(0.0, "sand", (0, 0)): [SUB_GEN, SUB_ALL],
            NewFeatureInstance(0.0, "water", (0, 0)): [MAP_UPDATE, SUB_ALL],
            RobotFailure(0.0, "r1"): [SUB_ALL],
        }
        for event, expected in cases.items():
            assert route_event(event) == expected

    def test_on_time_status_routes_monitor_only(self):
        event = SubtaskStatusUpdate(
            0.0, "r1", "t#0", "s", 0, "completed", elapsed=2.0, planned=2.0
        )
        assert route_event(event) == [MONITOR]

    def test_delayed_status_adds_replanning(self):
        event = SubtaskStatusUpdate(
            0.0, "r1", "t#0", "s", 0, "completed", elapsed=4.0, planned=2.0
        )
        assert route_event(event) == [MONITOR, SUB_ALL]
        explicit = SubtaskStatusUpdate(0.0, "r1", "t#0", "s", 0, "delayed")
        assert route_event(explicit) == [MONITOR, SUB_ALL]

    def test_routing_totality(self):
        # every class has exactly one route and replanning appears in the
        # unconditional table row of each
        from dexter.orchestrator import ADAPTATION_ROUTE

        assert set(ADAPTATION_ROUTE) == set(EVENT_KINDS)
        for kind, route in ADAPTATION_ROUTE.items():
            assert SUB_ALL in route


@pytest.fixture(scope="module")
def finished():
    orch = make_orchestrator(scenario1())
    orch.run()
    return orch


class TestScenario1Run:

    def test_all_tasks_complete_sr_one(self, finished):
        metrics = compute_metrics(finished.log.records, finished.sim.gt)
        assert metrics.success_rate == 1.0
        assert metrics.tasks_completed == 4
        assert metrics.spl == pytest.approx(1.0)

    def test_no_validation_failures(self, finished):
        assert finished.log.of_kind("validation_failed") == []
        assert finished.log.of_kind("pipeline_error") == []
        assert finished.log.of_kind("rollback") == []

    def test_checkpoints_all_approved(self, finished):
        decisions = {r["decision"] for r in finished.log.of_kind("checkpoint")}
        assert decisions == {"approved"}

    def test_priority_instance_used_zero_backend_calls(self, finished):
        # the severe-injury event replicates the existing rescue strategy
        replications = finished.log.of_kind("strategy_replicated")
        assert len(replications) == 1
        assert replications[0]["strategy_id"] == "injury-rescue"
        # generation ran exactly twice: initially and for the sand feature
        assert len(finished.log.of_kind("llm_call")) == 2

    def test_sand_feature_added_strategy(self, finished):
        calls = finished.log.of_kind("llm_call")
        assert calls[-1]["added"] == {"small_fire": ["small_fire-sand"]}

    def test_priority_task_starts_first(self, finished):
        starts = {}
        for g in finished.plan.all_subtasks():
            starts.setdefault(g.task_id, g.start)
        severe = next(
            t for t in finished.poset.tasks
            if t.priority_rank == 0 and t.task_type == "injury"
        )
        mild = next(
            t for t in finished.poset.tasks
            if t.priority_rank == 1 and t.task_type == "injury"
            and t.source_event == "new_task_instance"
        )
        assert starts[severe.id] <= starts[mild.id] + 1e-9

    def test_every_plan_was_validated(self, finished):
        plans = finished.log.of_kind("plan_installed")
        checkpoints = [
            r for r in finished.log.of_kind("checkpoint") if r["stage"] == "plan"
        ]
        assert len(plans) == len(checkpoints)
        assert all(r["decision"] == "approved" for r in checkpoints)


class TestDeterminismAndReplay:
    def test_byte_identical_runlogs(self):
        logs = []
        for _ in range(2):
            orch = make_orchestrator(scenario1())
            orch.run()
            logs.append(orch.log.to_jsonl())
        assert logs[0] == logs[1]

    def test_replay_reproduces_plans(self):
        orch = make_orchestrator(scenario1())
        orch.run()
        replayed = replay_events(
            scenario1(), orch.log.records, mock_backend(orch.sim.mock_rules)
        )
        original = [r["plan_hash"] for r in orch.log.of_kind("plan_installed")]
        again = [r["plan_hash"] for r in replayed.log.of_kind("plan_installed")]
        assert original == again
        assert orch.plan.to_obj() == replayed.plan.to_obj()

    def test_replay_with_injection(self):
        data = timeline()
        orch = make_orchestrator(data)
        orch.start()
        orch.inject(
            NewTaskInstance(0.3, "injury", (7, 0), "victim_injected")
        )
        orch.run()
        replayed = replay_events(
            data, orch.log.records, mock_backend(orch.sim.mock_rules)
        )
        assert [r["plan_hash"] for r in orch.log.of_kind("plan_installed")] == [
            r["plan_hash"] for r in replayed.log.of_kind("plan_installed")
        ]


class TestAdaptationTimeline:
    def test_nearer_station_strictly_reduces_completion(self):
        with_event = timeline()
        without_event = copy.deepcopy(with_event)
        without_event["script"] = [
            item
            for item in without_event["script"]
            if item["payload"]["kind"] != "new_feature_instance"
        ]

        def completion_time(data):
            orch = make_orchestrator(data)
            orch.run()
            done = orch.log.of_kind("task_completed")
            assert {r["task_id"] for r in done} >= {"injury#0", "injury#1"}
            return max(
                r["t"] for r in done if r["task_type"] == "injury"
            )

        faster = completion_time(with_event)
        slower = completion_time(without_event)
        assert faster < slower - 1e-9

    def test_priority_first_subtask_not_later_than_sibling(self):
        orch = make_orchestrator(timeline())
        orch.run()
        starts = {}
        for g in orch.plan.all_subtasks():
            starts[g.task_id] = min(starts.get(g.task_id, g.start), g.start)
        severe = next(t.id for t in orch.poset.tasks if t.priority_rank == 0)
        mild = next(
            t.id for t in orch.poset.tasks
            if t.priority_rank == 1 and t.source_event == "new_task_instance"
        )
        assert starts[severe] <= starts[mild] + 1e-9

    def test_new_feature_type_triggers_one_generation(self):
        orch = make_orchestrator(timeline())
        orch.run()
        calls = orch.log.of_kind("llm_call")
        assert len(calls) == 2  # initial pass plus exactly one for the sand event
        sand_routes = [
            r for r in orch.log.of_kind("route")
            if r["event_kind"] == "new_feature_type"
        ]
        assert len(sand_routes) == 1
        assert sand_routes[0]["modules"] == [SUB_GEN, SUB_ALL]


class TestRollback:
    def test_rejected_checkpoint_restores_state(self):
        orch = make_orchestrator(scenario1(), mode="interactive",
                                 checkpoint_timeout_s=2.0)
        decisions = []

        def scripted_decision():
            if decisions:
                return decisions.pop(0)
            return None

        orch._decision_ready = scripted_decision
        orch._tick_while_blocked = False
        orch.start()
        before = {
            "poset": orch.poset,
            "plan": orch.plan.to_obj(),
            "layered": orch.layered.to_obj(),
        }
        decisions.extend([
            {"decision": "approved"},  # poset checkpoint
            {"decision": "rejected", "reason": "operator says no"},  # plan
        ])
        event = NewPriorityTaskInstance(1.0, "injury", 0, (9, 5), "v2")
        orch.handle_event(event)
        assert orch.poset == before["poset"]
        assert orch.plan.to_obj() == before["plan"]
        assert orch.layered.to_obj() == before["layered"]
        rollback = orch.log.of_kind("rollback")
        assert rollback and rollback[0]["stage"] == "plan"

    def test_timeout_falls_back_to_auto(self):
        orch = make_orchestrator(scenario1(), mode="interactive",
                                 checkpoint_timeout_s=0.05)
        orch._decision_ready = lambda: None
        orch._tick_while_blocked = False
        orch.start()
        fallbacks = [
            r for r in orch.log.of_kind("checkpoint") if r.get("auto_fallback")
        ]
        assert fallbacks  # every initial checkpoint timed out into auto
        assert all(r["decision"] == "approved" for r in fallbacks)


class TestEventHandling:
    def test_duplicate_feature_instance_is_noop(self):
        orch = make_orchestrator(scenario1())
        orch.start()
        plans_before = len(orch.log.of_kind("plan_installed"))
        event = NewFeatureInstance(1.0, "water", (2, 2))  # already on the map
        orch.handle_event(event)
        assert len(orch.log.of_kind("plan_installed")) == plans_before
        route = orch.log.of_kind("route")[-1]
        assert route["modules"] == []
        assert orch.log.of_kind("map_duplicate")

    def test_robot_failure_reassigns(self):
        orch = make_orchestrator(scenario1())
        orch.start()
        orch.handle_event(NewTaskInstance(0.5, "small_fire", (4, 2), "fire1"))
        fire_robots = {
            g.robot_id for g in orch.plan.all_subtasks() if g.task_id == "small_fire#0"
        }
        victim = sorted(fire_robots)[0]
        orch.handle_event(RobotFailure(0.6, victim))
        after = {
            g.robot_id for g in orch.plan.all_subtasks() if g.task_id == "small_fire#0"
        }
        assert victim not in after
        assert after  # someone else took it over

    def test_new_task_type_extends_mission(self):
        orch = make_orchestrator(build_stats_scenario())
        orch.start()
        event = NewTaskType(
            1.0, "newtype9", "G(obs9 -> F skill9)",
            (("obs9", "observation", ""), ("skill9", "skill", "newtype9")),
            (5, 5), "typed9",
        )
        orch.handle_event(event)
        assert "newtype9" in orch.poset.known_types
        assert orch.layered.for_type("newtype9")
        assert any(t.task_type == "newtype9" for t in orch.poset.tasks)

    def test_llm_economy_invariant(self):
        # over a whole run, generation calls equal the events routed
        # through SubGen plus the initial pass
        orch = make_orchestrator(scenario1())
        orch.run()
        routes = orch.log.of_kind("route")
        subgen_events = sum(1 for r in routes if SUB_GEN in r["modules"])
        assert len(orch.log.of_kind("llm_call")) == subgen_events + 1


class TestCheckpointEdits:
    def test_operator_edit_revalidated_and_applied(self):
        orch = make_orchestrator(scenario1(), mode="interactive",
                                 checkpoint_timeout_s=5.0)
        edited_holder = {}

        def scripted_decision():
            pending = orch.pending_checkpoint
            if pending is None:
                return None
            if pending.stage == "layered" and not edited_holder:
                artifact = copy.deepcopy(pending.artifact)
                artifact["explore"][0]["subtasks"][0]["duration_override"] = 4.0
                edited_holder["done"] = True
                return {"decision": "edited", "artifact": artifact,
                        "operator": "op1"}
            return {"decision": "approved"}

        orch._decision_ready = scripted_decision
        orch._tick_while_blocked = False
        orch.start()
        strategy = orch.layered.strategy("explore-survey")
        assert strategy.subtasks[0].duration_override == 4.0
        edits = [
            r for r in orch.log.of_kind("checkpoint") if r["decision"] == "edited"
        ]
        assert len(edits) == 1 and edits[0]["operator"] == "op1"

    def test_invalid_edit_rolls_back(self):
        orch = make_orchestrator(scenario1(), mode="interactive",
                                 checkpoint_timeout_s=5.0)

        def scripted_decision():
            pending = orch.pending_checkpoint
            if pending is None:
                return None
            if pending.stage == "layered":
                artifact = copy.deepcopy(pending.artifact)
                # cyclic dependencies: server-side re-validation must refuse
                subs = artifact["small_fire"][0]["subtasks"]
                subs[0]["dependencies"] = [1]
                return {"decision": "edited", "artifact": artifact}
            return {"decision": "approved"}

        orch._decision_ready = scripted_decision
        orch._tick_while_blocked = False
        orch.start()
        assert orch._failed is True
        assert orch.log.of_kind("rollback")

    def test_missing_strategy_coverage_is_pipeline_error(self):
        orch = make_orchestrator(scenario1())
        orch.start()
        orch.layered.strategies.pop("small_fire")
        orch.handle_event(NewTaskInstance(0.5, "small_fire", (4, 2), "fire1"))
        errors = orch.log.of_kind("pipeline_error")
        assert errors and "small_fire" in errors[-1]["error"]
        # rollback restored the pre-event poset: the instance is gone
        assert all(t.task_type != "small_fire" for t in orch.poset.tasks)


class TestFrozenFixtures:
    def test_pipeline_reproduces_frozen_layered_fixture(self):
        # the recorded fixture was produced once, reviewed, and frozen;
        # regeneration must match it byte for byte
        orch = make_orchestrator(scenario1())
        orch.run()
        with open("frontend/test/fixtures/layered.json") as fh:
            frozen = fh.read()
        regenerated = json.dumps(orch.layered.to_obj(), indent=2, sort_keys=True)
        assert regenerated == frozen.rstrip("\n")

    def test_llm_calls_carry_prompt_hashes(self):
        orch = make_orchestrator(scenario1())
        orch.run()
        calls = orch.log.of_kind("llm_call")
        assert calls
        for call in calls:
            assert len(call["prompt_hashes"]) == len(call["stages"])


class TestTriggerStats:
    def test_empty_log_zeroes(self):
        stats = compute_trigger_stats([])
        assert stats.events_total == 0
        assert stats.llm_call_count == 0
        assert stats.percentages == {MIS_COMP: 0.0, SUB_GEN: 0.0, SUB_ALL: 0.0}

    def test_all_new_task_type_log(self):
        records = []
        for i in range(4):
            records.append({"kind": "event", "event": {"kind": "new_task_type"}})
            records.append(
                {"kind": "route", "event_kind": "new_task_type",
                 "modules": [MIS_COMP, SUB_GEN, SUB_ALL]}
            )
            records.append({"kind": "llm_call"})
        stats = compute_trigger_stats(records)
        assert stats.percentages[MIS_COMP] == 100.0
        assert stats.percentages[SUB_GEN] == 100.0
        assert stats.percentages[SUB_ALL] == 100.0

    def test_on_time_completions_not_counted(self):
        records = [
            {"kind": "event",
             "event": {"kind": "subtask_status", "status": "completed",
                       "elapsed": 2.0, "planned": 2.0}},
            {"kind": "route", "event_kind": "subtask_status", "modules": [MONITOR]},
            {"kind": "event", "event": {"kind": "robot_failure"}},
            {"kind": "route", "event_kind": "robot_failure", "modules": [SUB_ALL]},
        ]
        stats = compute_trigger_stats(records)
        assert stats.events_total == 1
        assert stats.counts[SUB_ALL] == 1
