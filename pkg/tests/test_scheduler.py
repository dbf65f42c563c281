import math
from dataclasses import replace

import pytest

from dexter.events import NewFeatureInstance, RobotFailure, SubtaskStatusUpdate
from dexter.gridmap import GridMap
from dexter.mission import TaskNode, TaskPoset
from dexter.scheduler import (
    BudgetExceeded,
    CommittedSubtask,
    FleetPlan,
    Infeasible,
    NoFeasiblePlan,
    ReplanContext,
    RobotState,
    bnb_search,
    greedy_upper_bound,
    lower_bound,
    repair_plan,
    solve_inner_schedule,
    validate_plan,
)
from dexter.strategy import LayeredDag, RobotSkill, RobotSpec, StrategyDag, SubtaskSpec
from instances import random_instance
from oracle import brute_force_makespan


def robot(rid, rtype, skills, velocity=1.0, cell=(0, 0), available_at=0.0, failed=False):
    spec = RobotSpec(
        rid, rtype, tuple(RobotSkill(n, d) for n, d in skills.items()), velocity
    )
    return RobotState(spec, cell, available_at, failed)


def poset_of(*nodes, precedence=(), exclusion=()):
    return TaskPoset(
        tasks=tuple(TaskNode(n if "#" in n else f"{n}#0", n.split("#")[0]) for n in nodes),
        precedence=frozenset(precedence),
        exclusion=frozenset(frozenset(p) for p in exclusion),
        known_types=frozenset(n.split("#")[0] for n in nodes),
        counters=tuple((n.split("#")[0], 1) for n in nodes),
    )


def chain_strategy(strategy_id, task_type, actions, rtype, target="@task"):
    subs = tuple(
        SubtaskSpec(i, a, target, rtype, None, (i - 1,) if i else ())
        for i, a in enumerate(actions)
    )
    return StrategyDag(strategy_id, task_type, subs)


class TestInnerSolve:
    def test_single_subtask(self):
        poset = poset_of("job")
        layered = LayeredDag()
        layered.add(chain_strategy("job-a", "job", ["work"], "alpha"))
        fleet = [robot("r0", "alpha", {"work": 4.0}, cell=(1, 1))]
        plan = solve_inner_schedule(
            poset, layered, {"job#0": "job-a"}, fleet, GridMap(3, 3),
            locations={"job#0": (1, 1)},
        )
        assert plan.makespan == pytest.approx(4.0)

    def test_two_parallel_subtasks(self):
        poset = poset_of("a", "b")
        layered = LayeredDag()
        layered.add(chain_strategy("a-1", "a", ["work"], "alpha"))
        layered.add(chain_strategy("b-1", "b", ["work"], "alpha"))
        fleet = [
            robot("r0", "alpha", {"work": 5.0}, cell=(0, 0)),
            robot("r1", "alpha", {"work": 5.0}, cell=(1, 0)),
        ]
        plan = solve_inner_schedule(
            poset, layered, {"a#0": "a-1", "b#0": "b-1"}, fleet, GridMap(2, 1),
            locations={"a#0": (0, 0), "b#0": (1, 0)},
        )
        assert plan.makespan == pytest.approx(5.0)

    def test_matches_oracle_on_random_instances(self):
        for seed in range(30):
            poset, layered, fleet, grid, locations = random_instance(seed)
            # pin one strategy per task so the inner solve is isolated
            selection = {
                node.id: sorted(
                    layered.for_type(node.task_type), key=lambda d: d.strategy_id
                )[0].strategy_id
                for node in poset.tasks
            }
            single = LayeredDag()
            for sid in selection.values():
                single.add(layered.strategy(sid))
            expected = brute_force_makespan(poset, single, fleet, grid, locations)
            try:
                plan = solve_inner_schedule(
                    poset, single, selection, fleet, grid, locations
                )
                got = plan.makespan
            except Infeasible:
                got = None
            if expected is None:
                assert got is None, f"seed {seed}"
            else:
                assert got == pytest.approx(expected, abs=1e-9), f"seed {seed}"

    def test_infeasible_names_constraint(self):
        poset = poset_of("job")
        layered = LayeredDag()
        layered.add(chain_strategy("job-a", "job", ["weld"], "alpha"))
        fleet = [robot("r0", "alpha", {"work": 4.0})]
        with pytest.raises(Infeasible) as exc:
            solve_inner_schedule(
                poset, layered, {"job#0": "job-a"}, fleet, GridMap(2, 2),
                locations={"job#0": (0, 0)},
            )
        assert "job#0" in str(exc.value)

    def test_budget_exceeded(self):
        poset, layered, fleet, grid, locations = random_instance(3)
        selection = {
            node.id: layered.for_type(node.task_type)[0].strategy_id
            for node in poset.tasks
        }
        with pytest.raises(BudgetExceeded):
            solve_inner_schedule(
                poset, layered, selection, fleet, grid, locations,
                time_budget_s=-1.0,
            )


class TestGreedy:
    def test_single_subtask_matches_exact(self):
        poset = poset_of("job")
        layered = LayeredDag()
        layered.add(chain_strategy("job-a", "job", ["work"], "alpha"))
        fleet = [robot("r0", "alpha", {"work": 4.0}, cell=(1, 1))]
        grid = GridMap(3, 3)
        locations = {"job#0": (1, 1)}
        greedy = greedy_upper_bound(poset, layered, fleet, grid, locations)
        exact = solve_inner_schedule(
            poset, layered, {"job#0": "job-a"}, fleet, grid, locations
        )
        assert greedy.makespan == pytest.approx(exact.makespan)

    def test_parallel_pair_matches_exact(self):
        poset = poset_of("a", "b")
        layered = LayeredDag()
        layered.add(chain_strategy("a-1", "a", ["work"], "alpha"))
        layered.add(chain_strategy("b-1", "b", ["work"], "alpha"))
        fleet = [
            robot("r0", "alpha", {"work": 5.0}, cell=(0, 0)),
            robot("r1", "alpha", {"work": 5.0}, cell=(1, 0)),
        ]
        grid = GridMap(2, 1)
        locations = {"a#0": (0, 0), "b#0": (1, 0)}
        greedy = greedy_upper_bound(poset, layered, fleet, grid, locations)
        assert greedy.makespan == pytest.approx(5.0)

    def test_never_beats_exact_on_random_instances(self):
        for seed in range(40):
            poset, layered, fleet, grid, locations = random_instance(seed)
            try:
                greedy = greedy_upper_bound(poset, layered, fleet, grid, locations)
            except Infeasible:
                continue
            violations = validate_plan(greedy, poset, layered, fleet, grid, locations)
            assert violations == [], f"seed {seed}: {violations}"
            optimum = brute_force_makespan(poset, layered, fleet, grid, locations)
            assert optimum is not None
            assert greedy.makespan >= optimum - 1e-9, f"seed {seed}"


class TestLowerBound:
    def test_no_remaining_tasks(self):
        poset = poset_of("job")
        assert lower_bound(7.5, [], poset, LayeredDag(), []) == 7.5

    def test_single_robot_serial_chain(self):
        poset = poset_of("job")
        layered = LayeredDag()
        layered.add(chain_strategy("job-a", "job", ["w1", "w2"], "alpha"))
        fleet = [robot("r0", "alpha", {"w1": 3.0, "w2": 2.0}, available_at=4.0)]
        got = lower_bound(4.0, ["job#0"], poset, layered, fleet)
        # one capable robot free at t=4 plus the 5s chain
        assert got == pytest.approx(9.0)

    def test_admissible_on_random_instances(self):
        for seed in range(40):
            poset, layered, fleet, grid, locations = random_instance(seed)
            optimum = brute_force_makespan(poset, layered, fleet, grid, locations)
            if optimum is None:
                continue
            bound = lower_bound(0.0, poset.task_ids(), poset, layered, fleet)
            assert bound <= optimum + 1e-9, f"seed {seed}"


class TestBnb:
    def test_single_task_single_strategy(self):
        poset = poset_of("job")
        layered = LayeredDag()
        layered.add(chain_strategy("job-a", "job", ["work"], "alpha"))
        fleet = [robot("r0", "alpha", {"work": 4.0}, cell=(1, 1))]
        grid = GridMap(3, 3)
        locations = {"job#0": (1, 1)}
        plan = bnb_search(poset, layered, fleet, grid, locations)
        exact = solve_inner_schedule(
            poset, layered, {"job#0": "job-a"}, fleet, grid, locations
        )
        assert plan.makespan == pytest.approx(exact.makespan)
        assert plan.optimal

    def test_two_by_two_selection_matches_enumeration(self):
        poset = poset_of("a", "b")
        layered = LayeredDag()
        layered.add(chain_strategy("a-1", "a", ["fast"], "alpha"))
        layered.add(chain_strategy("a-2", "a", ["slow", "slow"], "alpha"))
        layered.add(chain_strategy("b-1", "b", ["fast"], "beta"))
        layered.add(chain_strategy("b-2", "b", ["slow"], "beta"))
        fleet = [
            robot("r0", "alpha", {"fast": 2.0, "slow": 5.0}, cell=(0, 0)),
            robot("r1", "beta", {"fast": 2.0, "slow": 5.0}, cell=(1, 0)),
        ]
        grid = GridMap(3, 1)
        locations = {"a#0": (0, 0), "b#0": (1, 0)}
        best = math.inf
        for sa in ("a-1", "a-2"):
            for sb in ("b-1", "b-2"):
                try:
                    plan = solve_inner_schedule(
                        poset, layered, {"a#0": sa, "b#0": sb}, fleet, grid, locations
                    )
                    best = min(best, plan.makespan)
                except Infeasible:
                    pass
        plan = bnb_search(poset, layered, fleet, grid, locations)
        assert plan.makespan == pytest.approx(best)

    def test_nearer_resource_strategy_wins(self):
        # water reservoir sits next to the fire; the extinguisher depot is
        # far away, so the water strategy strictly dominates
        poset = poset_of("fire")
        layered = LayeredDag()
        layered.add(
            StrategyDag(
                "fire-ext",
                "fire",
                (
                    SubtaskSpec(0, "fetch", "ext_depot", "fdrone", None, ()),
                    SubtaskSpec(1, "use_ext", "@task", "fdrone", None, (0,)),
                ),
            )
        )
        layered.add(
            StrategyDag(
                "fire-water",
                "fire",
                (
                    SubtaskSpec(0, "refill", "water", "fdrone", None, ()),
                    SubtaskSpec(1, "spray", "@task", "fdrone", None, (0,)),
                ),
            )
        )
        fleet = [
            robot(
                "d0",
                "fdrone",
                {"fetch": 2.0, "use_ext": 2.0, "refill": 2.0, "spray": 2.0},
                cell=(4, 0),
            )
        ]
        grid = GridMap(9, 1)
        grid.add_feature("water", (3, 0))
        grid.add_feature("ext_depot", (0, 0))
        locations = {"fire#0": (4, 0)}
        expected = brute_force_makespan(poset, layered, fleet, grid, locations)
        plan = bnb_search(poset, layered, fleet, grid, locations)
        assert plan.makespan == pytest.approx(expected)
        assert plan.selection() == {"fire#0": "fire-water"}
        assert plan.makespan == pytest.approx(6.0)

    def test_matches_oracle_on_random_instances(self):
        for seed in range(30):
            poset, layered, fleet, grid, locations = random_instance(seed)
            expected = brute_force_makespan(poset, layered, fleet, grid, locations)
            try:
                plan = bnb_search(poset, layered, fleet, grid, locations)
                got = plan.makespan
                assert plan.optimal
                assert validate_plan(plan, poset, layered, fleet, grid, locations) == []
            except NoFeasiblePlan:
                got = None
            if expected is None:
                assert got is None, f"seed {seed}"
            else:
                assert got == pytest.approx(expected, abs=1e-9), f"seed {seed}"

    def test_empty_poset_yields_empty_plan(self):
        poset = TaskPoset()
        plan = bnb_search(poset, LayeredDag(), [robot("r0", "a", {"w": 1.0})], GridMap(2, 2))
        assert plan.makespan == 0.0
        assert plan.robot_plans == ()

    def test_missing_strategy_coverage(self):
        poset = poset_of("job")
        with pytest.raises(NoFeasiblePlan):
            bnb_search(poset, LayeredDag(), [robot("r0", "a", {"w": 1.0})], GridMap(2, 2))

    def test_budget_returns_incumbent_non_optimal(self):
        poset, layered, fleet, grid, locations = random_instance(7)
        plan = bnb_search(poset, layered, fleet, grid, locations, time_budget_s=0.0)
        assert plan.optimal is False
        assert validate_plan(plan, poset, layered, fleet, grid, locations) == []

    def test_regression_partial_bound_must_not_borrow_plan_times(self):
        # the expanded node's schedule had the shared robot busy late, and
        # a bound built from that schedule once pruned the true optimum
        poset, layered, fleet, grid, locations = random_instance(324)
        expected = brute_force_makespan(poset, layered, fleet, grid, locations)
        plan = bnb_search(poset, layered, fleet, grid, locations)
        assert plan.makespan == pytest.approx(expected, abs=1e-9)

    def test_incumbent_monotonically_improves(self):
        for seed in range(20):
            poset, layered, fleet, grid, locations = random_instance(seed)
            history = []
            try:
                bnb_search(
                    poset, layered, fleet, grid, locations,
                    on_incumbent=history.append,
                )
            except NoFeasiblePlan:
                continue
            assert history == sorted(history, reverse=True), f"seed {seed}"


class TestValidatePlan:
    def make_plan(self):
        poset = poset_of("a", "b", exclusion=[("a#0", "b#0")])
        layered = LayeredDag()
        layered.add(chain_strategy("a-1", "a", ["w1", "w2"], "alpha"))
        layered.add(chain_strategy("b-1", "b", ["w1"], "alpha"))
        fleet = [
            robot("r0", "alpha", {"w1": 3.0, "w2": 2.0}, cell=(0, 0)),
            robot("r1", "alpha", {"w1": 3.0, "w2": 2.0}, cell=(3, 0)),
        ]
        grid = GridMap(4, 1)
        locations = {"a#0": (1, 0), "b#0": (2, 0)}
        plan = bnb_search(poset, layered, fleet, grid, locations)
        return plan, poset, layered, fleet, grid, locations

    def test_solver_output_is_clean(self):
        plan, *ctx = self.make_plan()
        assert validate_plan(plan, *ctx) == []

    def test_corrupted_overlap_detected(self):
        plan, poset, layered, fleet, grid, locations = self.make_plan()
        rid, subs = max(plan.robot_plans, key=lambda kv: len(kv[1]))
        if len(subs) < 2:
            # force both tasks onto one robot to build the corruption
            fleet = fleet[:1]
            plan = bnb_search(poset, layered, fleet, grid, locations)
            rid, subs = plan.robot_plans[0]
        moved = list(subs)
        moved[1] = replace(moved[1], start=moved[0].start, end=moved[0].start + (moved[1].end - moved[1].start))
        bad = FleetPlan(
            tuple((r, tuple(moved) if r == rid else s) for r, s in plan.robot_plans),
            plan.makespan,
        )
        kinds = {v.kind for v in validate_plan(bad, poset, layered, fleet, grid, locations)}
        assert "robot_overlap" in kinds or "travel" in kinds

    def test_exclusion_overlap_detected(self):
        plan, poset, layered, fleet, grid, locations = self.make_plan()
        grounded = plan.all_subtasks()
        a_sub = next(g for g in grounded if g.task_id == "a#0")
        b_sub = next(g for g in grounded if g.task_id == "b#0")
        # drag b's subtask onto a's interval
        shifted = replace(
            b_sub, start=a_sub.start, end=a_sub.start + (b_sub.end - b_sub.start)
        )
        bad = FleetPlan(
            tuple(
                (
                    rid,
                    tuple(shifted if g.key == b_sub.key else g for g in subs),
                )
                for rid, subs in plan.robot_plans
            ),
            plan.makespan,
        )
        kinds = {v.kind for v in validate_plan(bad, poset, layered, fleet, grid, locations)}
        assert "exclusion_overlap" in kinds


class TestRepair:
    def rescue_fixture(self, station_cells):
        poset = poset_of("rescue")
        layered = LayeredDag()
        layered.add(
            StrategyDag(
                "rescue-1",
                "rescue",
                (
                    SubtaskSpec(0, "secure", "@task", "cart", None, ()),
                    SubtaskSpec(1, "move_to", "rescue_station", "cart", None, (0,)),
                ),
            )
        )
        fleet = [robot("c0", "cart", {"secure": 2.0, "move_to": 2.0}, cell=(2, 0))]
        grid = GridMap(9, 1)
        for cell in station_cells:
            grid.add_station("rescue_station", cell)
        locations = {"rescue#0": (2, 0)}
        return poset, layered, fleet, grid, locations

    def test_failed_robot_replaced_by_twin(self):
        poset = poset_of("job")
        layered = LayeredDag()
        layered.add(chain_strategy("job-a", "job", ["w1", "w2"], "alpha"))
        fleet = [
            robot("r0", "alpha", {"w1": 3.0, "w2": 2.0}, cell=(0, 0)),
            robot("r1", "alpha", {"w1": 3.0, "w2": 2.0}, cell=(0, 0)),
        ]
        grid = GridMap(3, 1)
        locations = {"job#0": (2, 0)}
        plan = bnb_search(poset, layered, fleet, grid, locations)
        assert {g.robot_id for g in plan.all_subtasks()} == {"r0"}
        fleet[0].failed = True
        event = RobotFailure(timestamp=1.0, robot_id="r0")
        ctx = ReplanContext(poset, layered, fleet, grid, locations)
        repaired = repair_plan(plan, event, ctx)
        assert {g.robot_id for g in repaired.all_subtasks()} == {"r1"}
        assert validate_plan(repaired, poset, layered, fleet, grid, locations) == []

    def test_nearer_station_strictly_improves(self):
        poset, layered, fleet, grid, locations = self.rescue_fixture([(8, 0)])
        before = bnb_search(poset, layered, fleet, grid, locations)
        assert before.makespan == pytest.approx(10.0)
        grid.add_station("rescue_station", (3, 0))
        event = NewFeatureInstance(
            timestamp=1.0, feature="rescue_station", location=(3, 0), station=True
        )
        ctx = ReplanContext(poset, layered, fleet, grid, locations)
        repaired = repair_plan(before, event, ctx)
        oracle_value = brute_force_makespan(poset, layered, fleet, grid, locations)
        assert repaired.makespan == pytest.approx(oracle_value)
        assert repaired.makespan < before.makespan - 1e-9
        assert repaired.makespan == pytest.approx(5.0)

    def test_completed_subtasks_untouched(self):
        poset, layered, fleet, grid, locations = self.rescue_fixture([(8, 0)])
        committed = (
            CommittedSubtask(
                "rescue#0", "rescue-1", 0, "secure", "c0", 0.0, 2.0, (2, 0)
            ),
        )
        fleet[0].available_at = 2.0
        event = SubtaskStatusUpdate(
            timestamp=2.0, robot_id="c0", task_id="rescue#0",
            strategy_id="rescue-1", index=0, status="completed",
        )
        ctx = ReplanContext(
            poset, layered, fleet, grid, locations, committed=committed
        )
        repaired = repair_plan(None, event, ctx)
        done = next(g for g in repaired.all_subtasks() if g.index == 0)
        assert (done.start, done.end, done.robot_id) == (0.0, 2.0, "c0")
        assert validate_plan(
            repaired, poset, layered, fleet, grid, locations, committed=committed
        ) == []

    def test_rejects_regeneration_events(self):
        poset, layered, fleet, grid, locations = self.rescue_fixture([(8, 0)])
        from dexter.events import NewFeatureType

        event = NewFeatureType(timestamp=0.0, feature="sand", location=(1, 0))
        with pytest.raises(ValueError):
            repair_plan(None, event, ReplanContext(poset, layered, fleet, grid, locations))

    def test_committed_prefix_matches_oracle(self):
        # freeze a dependency-closed prefix of the optimum, then re-solve:
        # search and brute force must still agree on the residual optimum
        for seed in range(30):
            poset, layered, fleet, grid, locations = random_instance(seed)
            try:
                plan = bnb_search(poset, layered, fleet, grid, locations)
            except NoFeasiblePlan:
                continue
            subs = plan.all_subtasks()
            k = (seed % 3) + 1
            chosen: dict[tuple, object] = {}
            for g in subs[:k]:
                chosen[g.key] = g
                strategy = layered.strategy(g.strategy_id)
                spec = next(s for s in strategy.subtasks if s.index == g.index)
                pending = list(spec.dependencies)
                while pending:
                    dep_key = (g.task_id, g.strategy_id, pending.pop())
                    if dep_key in chosen:
                        continue
                    dep = next(x for x in subs if x.key == dep_key)
                    chosen[dep_key] = dep
                    dep_spec = next(
                        s for s in strategy.subtasks if s.index == dep_key[2]
                    )
                    pending.extend(dep_spec.dependencies)
            committed = tuple(
                CommittedSubtask(
                    g.task_id, g.strategy_id, g.index, g.action,
                    g.robot_id, g.start, g.end, g.location,
                )
                for g in sorted(chosen.values(), key=lambda g: (g.start, g.key))
            )
            expected = brute_force_makespan(
                poset, layered, fleet, grid, locations, committed
            )
            try:
                repaired = bnb_search(
                    poset, layered, fleet, grid, locations, committed=committed
                )
                got = repaired.makespan
                assert validate_plan(
                    repaired, poset, layered, fleet, grid, locations,
                    committed=committed,
                ) == [], f"seed {seed}"
            except (NoFeasiblePlan, Infeasible):
                got = None
            if expected is None:
                assert got is None, f"seed {seed}"
            else:
                assert got == pytest.approx(expected, abs=1e-9), f"seed {seed}"
