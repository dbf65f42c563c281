"""Strategy selection, subtask assignment and makespan-minimal scheduling.

The outer search is branch and bound over strategy selections: nodes are
partial selections respecting task precedence, expanded one task at a
time, ordered by an admissible lower bound, seeded with a greedy
incumbent.  Each node is priced by an exact inner solve that enumerates
capability-feasible assignments, target-cell choices and per-robot
sequences; timing is the least fixed point of the start-time
inequalities (dependencies finish to start, task precedence start after
start, per-robot chains with travel) and exclusion pairs are settled by
branching on the orientation of each overlapping interval pair.  All
ties break on fixed sort orders so results are reproducible.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

from .events import SUBALL_ONLY_KINDS, Event
from .gridmap import Cell, GridMap
from .mission import TaskPoset, topological_order
from .strategy import LayeredDag, RobotSpec

EPS = 1e-9


class SchedulingError(Exception):
    pass


class Infeasible(SchedulingError):
    pass


class BudgetExceeded(SchedulingError):
    pass


class NoFeasiblePlan(SchedulingError):
    pass


@dataclass
class RobotState:
    spec: RobotSpec
    location: Cell
    available_at: float = 0.0
    failed: bool = False

    def __post_init__(self):
        if self.available_at < 0:
            raise ValueError("available_at must be non-negative")


@dataclass(frozen=True)
class GroundedSubtask:
    strategy_id: str
    index: int
    task_id: str
    robot_id: str
    action: str
    start: float
    end: float
    location: Cell

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.task_id, self.strategy_id, self.index)


@dataclass(frozen=True)
class FleetPlan:
    robot_plans: tuple[tuple[str, tuple[GroundedSubtask, ...]], ...]
    makespan: float
    optimal: bool = True
    nodes_expanded: int = 0

    def plan_for(self, robot_id: str) -> tuple[GroundedSubtask, ...]:
        for rid, subs in self.robot_plans:
            if rid == robot_id:
                return subs
        return ()

    def all_subtasks(self) -> list[GroundedSubtask]:
        out = []
        for _, subs in self.robot_plans:
            out.extend(subs)
        return sorted(out, key=lambda g: (g.start, g.task_id, g.strategy_id, g.index))

    def selection(self) -> dict[str, str]:
        return {g.task_id: g.strategy_id for g in self.all_subtasks()}

    def to_obj(self) -> dict:
        return {
            "makespan_s": self.makespan,
            "optimal": self.optimal,
            "nodes_expanded": self.nodes_expanded,
            "robots": {
                rid: [
                    {
                        "strategy_id": g.strategy_id,
                        "index": g.index,
                        "task_id": g.task_id,
                        "action": g.action,
                        "start_s": g.start,
                        "end_s": g.end,
                        "cell": list(g.location),
                    }
                    for g in subs
                ]
                for rid, subs in self.robot_plans
            },
        }


def empty_plan() -> FleetPlan:
    return FleetPlan((), 0.0, True, 0)


@dataclass(frozen=True)
class CommittedSubtask:
    """A grounded subtask that execution already fixed (done or in flight)."""

    task_id: str
    strategy_id: str
    index: int
    action: str
    robot_id: str
    start: float
    end: float
    cell: Cell

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.task_id, self.strategy_id, self.index)


@dataclass(frozen=True)
class BnbNode:
    """Search node: a partial strategy selection and its price."""

    selection: tuple[tuple[str, str], ...]
    makespan: float
    bound: float

    def selected(self) -> dict[str, str]:
        return dict(self.selection)


@dataclass(frozen=True)
class PlanViolation:
    kind: str
    detail: tuple

    def __str__(self) -> str:
        return f"{self.kind}{self.detail}"


# ---------------------------------------------------------------------------
# problem construction


@dataclass(frozen=True)
class _Sub:
    sid: int
    task_id: str
    strategy_id: str
    index: int
    action: str
    robot_type: str
    targets: tuple[Cell, ...]
    override: Optional[float]
    deps_free: tuple[int, ...]
    deps_fixed_end: float
    group: int


@dataclass
class _Problem:
    subs: list[_Sub]
    fixed: list[CommittedSubtask]
    robots: list[RobotState]  # operational only, sorted by id
    grid: GridMap
    sas: list[tuple[str, str]]
    excl: list[tuple[str, str]]
    group_pin: dict[int, str]  # group -> robot id forced by committed members
    horizon: float

    def capable(self, sub: _Sub) -> list[RobotState]:
        return [
            r
            for r in self.robots
            if r.spec.robot_type == sub.robot_type
            and (sub.override is not None or r.spec.skill_duration(sub.action) is not None)
        ]

    def duration(self, sub: _Sub, robot: RobotState) -> float:
        if sub.override is not None:
            return sub.override
        d = robot.spec.skill_duration(sub.action)
        if d is None:
            raise Infeasible(f"robot {robot.spec.id} lacks skill {sub.action!r}")
        return d


def resolve_targets(
    target: str, task_id: str, grid: GridMap, locations: dict[str, Cell]
) -> tuple[Cell, ...]:
    """Candidate cells for a subtask target name."""
    if target == "@task":
        cell = locations.get(task_id)
        if cell is None:
            raise Infeasible(f"no location known for task {task_id!r}")
        cells = [cell]
    else:
        cells = grid.locations_of(target)
        if not cells:
            raise Infeasible(f"no instance of target {target!r} on the map")
    usable = tuple(
        c for c in sorted(set(cells)) if grid.is_free(c) and grid.is_explored(c)
    )
    if not usable:
        raise Infeasible(f"target {target!r} has no reachable instance")
    return usable


def _build_problem(
    poset: TaskPoset,
    layered: LayeredDag,
    selection: dict[str, str],
    fleet: list[RobotState],
    grid: GridMap,
    locations: dict[str, Cell],
    committed: tuple[CommittedSubtask, ...],
) -> _Problem:
    robots = sorted((r for r in fleet if not r.failed), key=lambda r: r.spec.id)
    if not robots:
        raise Infeasible("no operational robots")
    operational_ids = {r.spec.id for r in robots}
    committed_by_key = {c.key: c for c in committed}

    raw: list[tuple[tuple[str, str, int], dict]] = []
    group_root: dict[tuple[str, str, int], tuple[str, str, int]] = {}
    for task_id in sorted(selection):
        strategy = layered.strategy(selection[task_id])
        parent = {s.index: s.index for s in strategy.subtasks}

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for s in strategy.subtasks:
            if s.same_robot_as is not None:
                parent[find(s.index)] = find(s.same_robot_as)
        for s in strategy.subtasks:
            key = (task_id, strategy.strategy_id, s.index)
            group_root[key] = (task_id, strategy.strategy_id, find(s.index))
            if key in committed_by_key:
                continue
            raw.append((key, {
                "spec": s,
                "task_id": task_id,
                "strategy_id": strategy.strategy_id,
            }))

    key_to_sid = {key: i for i, (key, _) in enumerate(raw)}
    group_ids: dict[tuple[str, str, int], int] = {}
    group_pin: dict[int, str] = {}
    subs: list[_Sub] = []
    for i, (key, info) in enumerate(raw):
        s = info["spec"]
        deps_free: list[int] = []
        deps_fixed_end = 0.0
        for d in s.dependencies:
            dep_key = (info["task_id"], info["strategy_id"], d)
            if dep_key in committed_by_key:
                deps_fixed_end = max(deps_fixed_end, committed_by_key[dep_key].end)
            elif dep_key in key_to_sid:
                deps_free.append(key_to_sid[dep_key])
            else:
                raise Infeasible(f"dependency {dep_key} is not schedulable")
        group = group_ids.setdefault(group_root[key], len(group_ids))
        subs.append(
            _Sub(
                sid=i,
                task_id=info["task_id"],
                strategy_id=info["strategy_id"],
                index=s.index,
                action=s.action,
                robot_type=s.required_robot_type,
                targets=resolve_targets(s.target, info["task_id"], grid, locations),
                override=s.duration_override,
                deps_free=tuple(sorted(deps_free)),
                deps_fixed_end=deps_fixed_end,
                group=group,
            )
        )

    # a committed group member pins the whole group to its robot while
    # that robot is operational; bindings to lost robots are released
    for c in committed:
        root = group_root.get(c.key)
        if root is None or root not in group_ids:
            continue
        if c.robot_id in operational_ids:
            group_pin.setdefault(group_ids[root], c.robot_id)

    present_tasks = {s.task_id for s in subs}
    present_tasks.update(c.task_id for c in committed)
    sas = sorted(
        (a, b)
        for (a, b) in poset.precedence
        if a in present_tasks and b in present_tasks
    )
    excl = sorted(
        tuple(sorted(pair))
        for pair in poset.exclusion
        if len(pair) == 2 and set(pair) <= present_tasks
    )

    dur_ub = 0.0
    for s in subs:
        caps = [
            (s.override if s.override is not None else r.spec.skill_duration(s.action))
            for r in robots
            if r.spec.robot_type == s.robot_type
            and (s.override is not None or r.spec.skill_duration(s.action) is not None)
        ]
        if not caps:
            raise Infeasible(
                f"no capable robot for ({s.task_id}, {s.strategy_id}, {s.index})"
            )
        dur_ub += max(caps)
    slow = min(r.spec.velocity for r in robots)
    diameter = grid.width * grid.height * grid.cell_m / slow
    base_t = max([r.available_at for r in robots] + [c.end for c in committed] + [0.0])
    horizon = base_t + dur_ub + (len(subs) + 1) * diameter + 1.0

    return _Problem(subs, sorted(committed, key=lambda c: (c.start, c.key)),
                    robots, grid, sas, excl, group_pin, horizon)


def _travel(grid: GridMap, src: Cell, dst: Cell, velocity: float) -> float:
    if src == dst:
        return 0.0
    steps = grid._distances_from(src).get(dst)
    if steps is None:
        return math.inf
    return steps * grid.cell_m / velocity


# ---------------------------------------------------------------------------
# timing: least start times for fixed discrete choices


def _overlaps(s1: float, e1: float, s2: float, e2: float) -> bool:
    return s1 < e2 - EPS and s2 < e1 - EPS


def _solve_timing(
    problem: _Problem,
    assign: list[RobotState],
    cells: list[Cell],
    sequences: dict[str, list[int]],
    best_bound: float,
) -> Optional[tuple[list[float], float]]:
    """Cheapest feasible (starts, makespan) under ``best_bound`` or None."""
    subs = problem.subs
    n = len(subs)
    durations = [problem.duration(s, assign[s.sid]) for s in subs]

    # a robot's free work chains after all of its committed intervals,
    # departing from wherever the last one left it
    robot_anchor: dict[str, tuple[float, Cell]] = {}
    for c in problem.fixed:
        cur = robot_anchor.get(c.robot_id)
        if cur is None or c.end > cur[0]:
            robot_anchor[c.robot_id] = (c.end, c.cell)

    base = [0.0] * n
    seq_prev: list[Optional[int]] = [None] * n
    seq_travel = [0.0] * n
    for rid in sorted(sequences):
        robot = next(r for r in problem.robots if r.spec.id == rid)
        anchor_t, anchor_cell = robot_anchor.get(
            rid, (robot.available_at, robot.location)
        )
        anchor_t = max(anchor_t, robot.available_at)
        prev: Optional[int] = None
        prev_cell = anchor_cell
        for sid in sequences[rid]:
            t = _travel(problem.grid, prev_cell, cells[sid], robot.spec.velocity)
            if math.isinf(t):
                return None
            if prev is None:
                base[sid] = anchor_t + t
            seq_prev[sid] = prev
            seq_travel[sid] = t
            prev = sid
            prev_cell = cells[sid]
    for s in subs:
        base[s.sid] = max(base[s.sid], s.deps_fixed_end)

    task_sids: dict[str, list[int]] = {}
    for s in subs:
        task_sids.setdefault(s.task_id, []).append(s.sid)
    fixed_min_start: dict[str, float] = {}
    fixed_by_task: dict[str, list[CommittedSubtask]] = {}
    for c in problem.fixed:
        fixed_by_task.setdefault(c.task_id, []).append(c)
        fixed_min_start[c.task_id] = min(
            fixed_min_start.get(c.task_id, math.inf), c.start
        )
    # a successor that already started (has committed work) has its min
    # start fixed by history, so precedence imposes nothing on its rest
    sas_pairs = [
        (h, l)
        for (h, l) in problem.sas
        if l in task_sids and l not in fixed_min_start
    ]

    fixed_makespan = max([c.end for c in problem.fixed] + [0.0])
    max_passes = n + len(sas_pairs) + 4

    def fixpoint(
        edges: tuple[tuple[int, int], ...], floors: dict[int, float]
    ) -> Optional[list[float]]:
        est = [max(base[i], floors.get(i, 0.0)) for i in range(n)]
        for _ in range(max_passes):
            changed = False
            for s in subs:
                sid = s.sid
                lo = base[sid]
                p = seq_prev[sid]
                if p is not None:
                    lo = max(lo, est[p] + durations[p] + seq_travel[sid])
                for d in s.deps_free:
                    lo = max(lo, est[d] + durations[d])
                f = floors.get(sid)
                if f is not None:
                    lo = max(lo, f)
                if lo > est[sid] + EPS:
                    est[sid] = lo
                    changed = True
            for (h, l) in sas_pairs:
                h_min = fixed_min_start.get(h, math.inf)
                for sid in task_sids.get(h, ()):
                    h_min = min(h_min, est[sid])
                if math.isinf(h_min):
                    continue
                for sid in task_sids[l]:
                    if h_min > est[sid] + EPS:
                        est[sid] = h_min
                        changed = True
            for (i, j) in edges:
                lo = est[i] + durations[i]
                if lo > est[j] + EPS:
                    est[j] = lo
                    changed = True
            if not changed:
                if any(e > problem.horizon for e in est):
                    return None
                return est
        return None  # cyclic ordering constraints

    cross_free: list[tuple[int, int]] = []
    cross_fixed: list[tuple[int, CommittedSubtask]] = []
    for (a, b) in problem.excl:
        for i in task_sids.get(a, ()):
            for j in task_sids.get(b, ()):
                cross_free.append((i, j))
            for c in fixed_by_task.get(b, ()):
                cross_fixed.append((i, c))
        for j in task_sids.get(b, ()):
            for c in fixed_by_task.get(a, ()):
                cross_fixed.append((j, c))

    best: Optional[tuple[list[float], float]] = None
    best_mk = best_bound

    def branch(
        edges: tuple[tuple[int, int], ...],
        floors: dict[int, float],
    ) -> None:
        nonlocal best, best_mk
        est = fixpoint(edges, floors)
        if est is None:
            return
        makespan = max(
            [est[i] + durations[i] for i in range(n)] + [fixed_makespan]
        )
        if makespan >= best_mk - EPS:
            return  # further constraints only raise the makespan
        oriented = {(i, j) for (i, j) in edges}
        for (i, j) in cross_free:
            if (i, j) in oriented or (j, i) in oriented:
                continue
            if _overlaps(
                est[i], est[i] + durations[i], est[j], est[j] + durations[j]
            ):
                branch(edges + ((i, j),), floors)
                branch(edges + ((j, i),), floors)
                return
        for (i, c) in cross_fixed:
            if _overlaps(est[i], est[i] + durations[i], c.start, c.end):
                # the least start already runs into the committed window,
                # so running before it is impossible: floor past its end.
                # that can surface an overlap with the next window, which
                # recursion resolves (floors grow strictly, so it ends)
                new_floors = dict(floors)
                new_floors[i] = max(new_floors.get(i, 0.0), c.end)
                branch(edges, new_floors)
                return
        best = (est, makespan)
        best_mk = makespan

    branch((), {})
    return best


# ---------------------------------------------------------------------------
# exact inner solve for one strategy selection


@dataclass
class _InnerResult:
    starts: list[float]
    robots: list[str]
    cells: list[Cell]
    durations: list[float]
    makespan: float


def _dep_ancestors(subs: list[_Sub]) -> list[set[int]]:
    ancestors: list[set[int]] = [set() for _ in subs]
    changed = True
    while changed:
        changed = False
        for s in subs:
            acc = ancestors[s.sid]
            before = len(acc)
            for d in s.deps_free:
                acc.add(d)
                acc |= ancestors[d]
            if len(acc) != before:
                changed = True
    return ancestors


def _order_ok(perm: tuple[int, ...], ancestors: list[set[int]]) -> bool:
    seen: set[int] = set()
    members = set(perm)
    for sid in perm:
        if ancestors[sid] & (members - seen):
            return False
        seen.add(sid)
    return True


def _solve_selection(
    problem: _Problem,
    best_bound: float = math.inf,
    deadline: Optional[float] = None,
) -> Optional[_InnerResult]:
    """Exact minimum-makespan schedule, or None when nothing beats the bound."""
    subs = problem.subs
    n = len(subs)
    if n == 0:
        makespan = max([c.end for c in problem.fixed] + [0.0])
        if makespan >= best_bound - EPS and not math.isinf(best_bound):
            return None
        return _InnerResult([], [], [], [], makespan)

    groups: dict[int, list[_Sub]] = {}
    for s in subs:
        groups.setdefault(s.group, []).append(s)
    group_order = sorted(groups)
    group_capable: dict[int, list[RobotState]] = {}
    for g in group_order:
        members = groups[g]
        ids: Optional[set[str]] = None
        for m in members:
            caps = {r.spec.id for r in problem.capable(m)}
            ids = caps if ids is None else ids & caps
        pin = problem.group_pin.get(g)
        if pin is not None:
            ids = ids & {pin}
        if not ids:
            raise Infeasible(
                f"no robot can serve the same-robot group of task "
                f"{members[0].task_id!r}"
            )
        by_id = {r.spec.id: r for r in problem.robots}
        group_capable[g] = [by_id[rid] for rid in sorted(ids)]

    ancestors = _dep_ancestors(subs)
    target_options = [s.targets for s in subs]
    fixed_busy: dict[str, float] = {}
    for c in problem.fixed:
        fixed_busy[c.robot_id] = max(fixed_busy.get(c.robot_id, 0.0), c.end)

    assign: list[Optional[RobotState]] = [None] * n
    best: Optional[_InnerResult] = None
    best_mk = best_bound

    def load_bound() -> float:
        load: dict[str, float] = {}
        for s in subs:
            r = assign[s.sid]
            if r is None:
                continue
            rid = r.spec.id
            if rid not in load:
                load[rid] = max(r.available_at, fixed_busy.get(rid, 0.0))
            load[rid] += problem.duration(s, r)
        return max(load.values()) if load else 0.0

    def explore_sequences() -> None:
        nonlocal best, best_mk
        by_robot: dict[str, list[int]] = {}
        for s in subs:
            by_robot.setdefault(assign[s.sid].spec.id, []).append(s.sid)
        rids = sorted(by_robot)
        robot_perms = []
        for rid in rids:
            perms = [
                p
                for p in itertools.permutations(sorted(by_robot[rid]))
                if _order_ok(p, ancestors)
            ]
            if not perms:
                return
            robot_perms.append(perms)
        assigned = [assign[s.sid] for s in subs]
        for cells in itertools.product(*target_options):
            for combo in itertools.product(*robot_perms):
                seqs = {rid: list(p) for rid, p in zip(rids, combo)}
                timed = _solve_timing(problem, assigned, list(cells), seqs, best_mk)
                if timed is None:
                    continue
                est, makespan = timed
                best = _InnerResult(
                    est,
                    [r.spec.id for r in assigned],
                    list(cells),
                    [problem.duration(s, assigned[s.sid]) for s in subs],
                    makespan,
                )
                best_mk = makespan

    def assign_groups(gi: int) -> None:
        if deadline is not None and time.monotonic() > deadline:
            raise BudgetExceeded("scheduling budget exhausted")
        if gi == len(group_order):
            explore_sequences()
            return
        g = group_order[gi]
        for robot in group_capable[g]:
            for m in groups[g]:
                assign[m.sid] = robot
            if load_bound() < best_mk - EPS:
                assign_groups(gi + 1)
        for m in groups[g]:
            assign[m.sid] = None

    assign_groups(0)
    return best


def _result_to_plan(
    problem: _Problem, result: _InnerResult, optimal: bool, nodes: int
) -> FleetPlan:
    per_robot: dict[str, list[GroundedSubtask]] = {}
    for c in problem.fixed:
        per_robot.setdefault(c.robot_id, []).append(
            GroundedSubtask(
                c.strategy_id, c.index, c.task_id, c.robot_id,
                c.action, c.start, c.end, c.cell,
            )
        )
    for s in problem.subs:
        rid = result.robots[s.sid]
        per_robot.setdefault(rid, []).append(
            GroundedSubtask(
                s.strategy_id,
                s.index,
                s.task_id,
                rid,
                s.action,
                result.starts[s.sid],
                result.starts[s.sid] + result.durations[s.sid],
                result.cells[s.sid],
            )
        )
    plans = tuple(
        (rid, tuple(sorted(per_robot[rid], key=lambda g: (g.start, g.task_id, g.index))))
        for rid in sorted(per_robot)
    )
    return FleetPlan(plans, result.makespan, optimal, nodes)


def solve_inner_schedule(
    poset: TaskPoset,
    layered: LayeredDag,
    selection: dict[str, str],
    fleet: list[RobotState],
    grid: GridMap,
    locations: Optional[dict[str, Cell]] = None,
    committed: tuple[CommittedSubtask, ...] = (),
    time_budget_s: Optional[float] = None,
) -> FleetPlan:
    """Exact minimum-makespan schedule for a fixed strategy selection."""
    problem = _build_problem(
        poset, layered, selection, fleet, grid, locations or {}, committed
    )
    deadline = None if time_budget_s is None else time.monotonic() + time_budget_s
    result = _solve_selection(problem, deadline=deadline)
    if result is None:
        raise Infeasible("no schedule satisfies the constraints")
    return _result_to_plan(problem, result, True, 0)


# ---------------------------------------------------------------------------
# greedy upper bound


def _min_total_duration(strategy, robots: list[RobotState]) -> float:
    total = 0.0
    for s in strategy.subtasks:
        if s.duration_override is not None:
            total += s.duration_override
            continue
        durations = [
            r.spec.skill_duration(s.action)
            for r in robots
            if not r.failed
            and r.spec.robot_type == s.required_robot_type
            and r.spec.skill_duration(s.action) is not None
        ]
        if not durations:
            return math.inf
        total += min(durations)
    return total


def _critical_chain(strategy, robots: list[RobotState]) -> float:
    durations = {}
    for s in strategy.subtasks:
        if s.duration_override is not None:
            durations[s.index] = s.duration_override
            continue
        options = [
            r.spec.skill_duration(s.action)
            for r in robots
            if not r.failed
            and r.spec.robot_type == s.required_robot_type
            and r.spec.skill_duration(s.action) is not None
        ]
        durations[s.index] = min(options) if options else math.inf
    by_index = {s.index: s for s in strategy.subtasks}
    finish: dict[int, float] = {}

    def fin(i: int) -> float:
        if i not in finish:
            start = max((fin(d) for d in by_index[i].dependencies), default=0.0)
            finish[i] = start + durations[i]
        return finish[i]

    return max(fin(s.index) for s in strategy.subtasks)


def pick_min_duration_strategies(
    poset: TaskPoset, layered: LayeredDag, fleet: list[RobotState]
) -> dict[str, str]:
    selection = {}
    for node in poset.tasks:
        options = layered.for_type(node.task_type)
        if not options:
            raise Infeasible(f"no strategy for task type {node.task_type!r}")
        ranked = sorted(
            options, key=lambda d: (_min_total_duration(d, fleet), d.strategy_id)
        )
        selection[node.id] = ranked[0].strategy_id
    return selection


def greedy_upper_bound(
    poset: TaskPoset,
    layered: LayeredDag,
    fleet: list[RobotState],
    grid: GridMap,
    locations: Optional[dict[str, Cell]] = None,
    committed: tuple[CommittedSubtask, ...] = (),
) -> FleetPlan:
    """Feasible schedule from one-step greedy dispatch.

    Strategies are the per-task minimum-duration picks; each step places
    the first ready subtask (task topological order, then index) on the
    robot able to start it earliest.
    """
    locations = locations or {}
    selection = pick_min_duration_strategies(poset, layered, fleet)
    for c in committed:
        selection[c.task_id] = c.strategy_id
    problem = _build_problem(
        poset, layered, selection, fleet, grid, locations, committed
    )
    subs = problem.subs
    order_pos = {tid: i for i, tid in enumerate(topological_order(poset))}
    pending = sorted(
        subs, key=lambda s: (order_pos.get(s.task_id, 0), s.strategy_id, s.index)
    )

    placed: dict[int, tuple[str, float, float, Cell]] = {}
    robot_cursor: dict[str, tuple[float, Cell]] = {
        r.spec.id: (r.available_at, r.location) for r in problem.robots
    }
    for c in problem.fixed:
        cur = robot_cursor.get(c.robot_id)
        if cur is not None and c.end >= cur[0]:
            robot_cursor[c.robot_id] = (c.end, c.cell)

    task_min_start: dict[str, float] = {}
    for c in problem.fixed:
        task_min_start[c.task_id] = min(
            task_min_start.get(c.task_id, math.inf), c.start
        )
    started_tasks = set(task_min_start)
    group_robot: dict[int, str] = dict(problem.group_pin)
    excl_by_task: dict[str, set[str]] = {}
    for (a, b) in problem.excl:
        excl_by_task.setdefault(a, set()).add(b)
        excl_by_task.setdefault(b, set()).add(a)

    def blocking_spans(task_id: str) -> list[tuple[float, float]]:
        others = excl_by_task.get(task_id)
        if not others:
            return []
        spans = [(c.start, c.end) for c in problem.fixed if c.task_id in others]
        spans += [
            (placed[s.sid][1], placed[s.sid][2])
            for s in subs
            if s.sid in placed and s.task_id in others
        ]
        return sorted(spans)

    while pending:
        progressed = False
        for s in list(pending):
            if any(d not in placed for d in s.deps_free):
                continue
            if s.task_id in started_tasks:
                preds = []  # task already started; precedence is history
            else:
                preds = [a for (a, b) in problem.sas if b == s.task_id]
            if any(p not in task_min_start for p in preds):
                continue
            pinned = group_robot.get(s.group)
            options = problem.capable(s)
            if pinned is not None:
                options = [r for r in options if r.spec.id == pinned]
            best_choice = None
            for robot in options:
                avail, at = robot_cursor[robot.spec.id]
                for cell in s.targets:
                    t = _travel(problem.grid, at, cell, robot.spec.velocity)
                    if math.isinf(t):
                        continue
                    start = max(avail + t, s.deps_fixed_end)
                    for d in s.deps_free:
                        start = max(start, placed[d][2])
                    for p in preds:
                        start = max(start, task_min_start[p])
                    dur = problem.duration(s, robot)
                    spans = blocking_spans(s.task_id)
                    moved = True
                    while moved:
                        moved = False
                        for (b0, b1) in spans:
                            if start < b1 - EPS and b0 < start + dur - EPS:
                                start = b1
                                moved = True
                    key = (start, robot.spec.id, cell)
                    if best_choice is None or key < best_choice[0]:
                        best_choice = (key, robot, cell, dur)
            if best_choice is None:
                raise Infeasible(
                    f"greedy cannot place ({s.task_id}, {s.strategy_id}, {s.index})"
                )
            (start, _, _), robot, cell, dur = best_choice
            placed[s.sid] = (robot.spec.id, start, start + dur, cell)
            robot_cursor[robot.spec.id] = (start + dur, cell)
            group_robot.setdefault(s.group, robot.spec.id)
            task_min_start[s.task_id] = min(
                task_min_start.get(s.task_id, math.inf), start
            )
            pending.remove(s)
            progressed = True
        if not progressed:
            raise Infeasible("greedy dispatch stalled on circular constraints")

    makespan = max(
        [placed[s.sid][2] for s in subs] + [c.end for c in problem.fixed] + [0.0]
    )
    result = _InnerResult(
        [placed[s.sid][1] for s in subs],
        [placed[s.sid][0] for s in subs],
        [placed[s.sid][3] for s in subs],
        [placed[s.sid][2] - placed[s.sid][1] for s in subs],
        makespan,
    )
    return _result_to_plan(problem, result, False, 0)


# ---------------------------------------------------------------------------
# lower bound and the outer branch-and-bound search


def lower_bound(
    makespan_so_far: float,
    remaining_task_ids: list[str],
    poset: TaskPoset,
    layered: LayeredDag,
    fleet: list[RobotState],
    availability: Optional[dict[str, float]] = None,
    paper_lb: bool = False,
) -> float:
    """Admissible price of finishing ``remaining_task_ids``.

    The default is max(makespan so far, longest remaining critical chain,
    earliest capable-robot availability + workload / capable robots).
    ``availability`` must hold facts a completion cannot undo (committed
    work), never times read off a rearrangeable partial schedule.
    ``paper_lb`` switches to the plain remaining-workload sum, which can
    overshoot under robot parallelism.
    """
    alive = [r for r in fleet if not r.failed]
    if not remaining_task_ids:
        return makespan_so_far
    workload = 0.0
    chain = 0.0
    capable_ids: set[str] = set()
    for task_id in remaining_task_ids:
        node = poset.node(task_id)
        options = layered.for_type(node.task_type)
        if not options:
            return math.inf
        best_total = math.inf
        best_chain = math.inf
        for strategy in options:
            best_total = min(best_total, _min_total_duration(strategy, alive))
            best_chain = min(best_chain, _critical_chain(strategy, alive))
            for s in strategy.subtasks:
                for r in alive:
                    if r.spec.robot_type == s.required_robot_type and (
                        s.duration_override is not None
                        or r.spec.skill_duration(s.action) is not None
                    ):
                        capable_ids.add(r.spec.id)
        workload += best_total
        chain = max(chain, best_chain)
    if paper_lb:
        return max(makespan_so_far, workload)
    if not capable_ids:
        return math.inf
    avail = availability or {}
    ready = min(
        max(avail.get(r.spec.id, 0.0), r.available_at)
        for r in alive
        if r.spec.id in capable_ids
    )
    return max(makespan_so_far, chain, ready + workload / len(capable_ids))


def bnb_search(
    poset: TaskPoset,
    layered: LayeredDag,
    fleet: list[RobotState],
    grid: GridMap,
    locations: Optional[dict[str, Cell]] = None,
    time_budget_s: Optional[float] = None,
    committed: tuple[CommittedSubtask, ...] = (),
    paper_lb: bool = False,
    on_incumbent=None,
) -> FleetPlan:
    """Best plan over strategy selections; optimal when the search
    exhausts before the budget, otherwise the anytime incumbent."""
    locations = locations or {}
    task_ids = poset.task_ids()
    for node in poset.tasks:
        if not layered.for_type(node.task_type):
            raise NoFeasiblePlan(f"no strategy covers task type {node.task_type!r}")
    deadline = None if time_budget_s is None else time.monotonic() + time_budget_s

    forced: dict[str, str] = {}
    for c in sorted(committed, key=lambda c: c.key):
        forced.setdefault(c.task_id, c.strategy_id)

    nodes_expanded = 0

    def out_of_time() -> bool:
        return deadline is not None and time.monotonic() > deadline

    def solve_full(selection: dict[str, str], cap: float) -> Optional[FleetPlan]:
        problem = _build_problem(
            poset, layered, selection, fleet, grid, locations, committed
        )
        result = _solve_selection(problem, best_bound=cap, deadline=deadline)
        if result is None:
            return None
        return _result_to_plan(problem, result, True, 0)

    incumbent: Optional[FleetPlan] = None
    try:
        incumbent = greedy_upper_bound(poset, layered, fleet, grid, locations, committed)
        if on_incumbent is not None:
            on_incumbent(incumbent.makespan)
    except Infeasible:
        incumbent = None

    if all(t in forced for t in task_ids):
        try:
            plan = solve_full(dict(forced), math.inf)
        except (Infeasible, BudgetExceeded):
            plan = None
        if plan is None:
            raise NoFeasiblePlan("committed selection admits no schedule")
        return replace(plan, nodes_expanded=0)

    # only committed work pins a robot's availability; a node's partial
    # schedule does not, since completions may rearrange that subset
    committed_busy: dict[str, float] = {}
    for c in committed:
        committed_busy[c.robot_id] = max(committed_busy.get(c.robot_id, 0.0), c.end)

    root_remaining = [t for t in task_ids if t not in forced]
    root_bound = lower_bound(
        max([c.end for c in committed] + [0.0]),
        root_remaining, poset, layered, fleet,
        availability=committed_busy, paper_lb=paper_lb,
    )
    sig = tuple(sorted(forced.items()))
    heap: list = [(root_bound, len(root_remaining), sig, dict(forced), None)]

    while heap:
        if out_of_time():
            if incumbent is None:
                raise NoFeasiblePlan("budget exhausted before any feasible plan")
            return replace(incumbent, optimal=False, nodes_expanded=nodes_expanded)
        bound, _, _, selection, _ = heapq.heappop(heap)
        if incumbent is not None and bound >= incumbent.makespan - 1e-12:
            continue
        remaining = [t for t in task_ids if t not in selection]
        ready = [
            t for t in remaining
            if all(p in selection for p in poset.predecessors(t))
        ]
        if not ready:
            continue
        expand_task = min(ready)
        nodes_expanded += 1
        node_type = poset.node(expand_task).task_type
        for strategy in sorted(layered.for_type(node_type), key=lambda d: d.strategy_id):
            child_sel = dict(selection)
            child_sel[expand_task] = strategy.strategy_id
            cap = math.inf if incumbent is None else incumbent.makespan
            try:
                problem = _build_problem(
                    poset, layered, child_sel, fleet, grid, locations, committed
                )
                result = _solve_selection(problem, best_bound=cap, deadline=deadline)
            except Infeasible:
                continue
            except BudgetExceeded:
                if incumbent is None:
                    raise NoFeasiblePlan("budget exhausted before any feasible plan")
                return replace(incumbent, optimal=False, nodes_expanded=nodes_expanded)
            if result is None:
                continue  # nothing beats the incumbent down this branch
            child_remaining = [t for t in task_ids if t not in child_sel]
            if not child_remaining:
                if incumbent is None or result.makespan < incumbent.makespan - EPS:
                    incumbent = _result_to_plan(problem, result, True, 0)
                    if on_incumbent is not None:
                        on_incumbent(incumbent.makespan)
                continue
            child_bound = lower_bound(
                result.makespan,
                child_remaining,
                poset,
                layered,
                fleet,
                availability=committed_busy,
                paper_lb=paper_lb,
            )
            if incumbent is not None and child_bound >= incumbent.makespan - 1e-12:
                continue
            heapq.heappush(
                heap,
                (
                    child_bound,
                    len(child_remaining),
                    tuple(sorted(child_sel.items())),
                    child_sel,
                    None,
                ),
            )

    if incumbent is None:
        raise NoFeasiblePlan("no strategy selection yields a feasible schedule")
    return replace(incumbent, optimal=True, nodes_expanded=nodes_expanded)


# ---------------------------------------------------------------------------
# validation and repair


def validate_plan(
    plan: FleetPlan,
    poset: TaskPoset,
    layered: LayeredDag,
    fleet: list[RobotState],
    grid: GridMap,
    locations: Optional[dict[str, Cell]] = None,
    committed: tuple[CommittedSubtask, ...] = (),
) -> list[PlanViolation]:
    """Re-check every scheduling constraint; empty list means clean."""
    locations = locations or {}
    violations: list[PlanViolation] = []
    robots = {r.spec.id: r for r in fleet}
    committed_keys = {c.key for c in committed}
    grounded = plan.all_subtasks()
    by_key = {g.key: g for g in grounded}

    for g in grounded:
        robot = robots.get(g.robot_id)
        if robot is None:
            violations.append(PlanViolation("unknown_robot", (g.robot_id,)))
            continue
        if g.key in committed_keys:
            continue
        if robot.failed:
            violations.append(
                PlanViolation("capability", (g.robot_id, "failed", g.task_id, g.index))
            )
        try:
            strategy = layered.strategy(g.strategy_id)
        except KeyError:
            violations.append(PlanViolation("unknown_strategy", (g.strategy_id,)))
            continue
        spec = next((s for s in strategy.subtasks if s.index == g.index), None)
        if spec is None:
            violations.append(PlanViolation("unknown_subtask", (g.strategy_id, g.index)))
            continue
        if robot.spec.robot_type != spec.required_robot_type:
            violations.append(
                PlanViolation(
                    "capability",
                    (g.robot_id, robot.spec.robot_type, spec.required_robot_type),
                )
            )
        expected = (
            spec.duration_override
            if spec.duration_override is not None
            else robot.spec.skill_duration(spec.action)
        )
        if expected is None:
            violations.append(
                PlanViolation("capability", (g.robot_id, "no-skill", spec.action))
            )
        elif abs((g.end - g.start) - expected) > 1e-6:
            violations.append(
                PlanViolation(
                    "duration_mismatch", (g.task_id, g.index, g.end - g.start, expected)
                )
            )
        if g.start < -EPS:
            violations.append(PlanViolation("negative_start", (g.task_id, g.index)))
        try:
            candidates = resolve_targets(spec.target, g.task_id, grid, locations)
            if g.location not in candidates:
                violations.append(
                    PlanViolation("location", (g.task_id, g.index, g.location))
                )
        except Infeasible:
            violations.append(
                PlanViolation("location", (g.task_id, g.index, spec.target))
            )

    for rid, gs in plan.robot_plans:
        robot = robots.get(rid)
        if robot is None:
            continue
        anchor_time, anchor_cell = robot.available_at, robot.location
        prev_end = None
        for g in sorted(gs, key=lambda g: (g.start, g.end)):
            if prev_end is not None and g.start < prev_end - EPS:
                violations.append(PlanViolation("robot_overlap", (rid, g.task_id, g.index)))
            if g.key in committed_keys:
                anchor_time, anchor_cell = g.end, g.location
                prev_end = g.end
                continue
            t = _travel(grid, anchor_cell, g.location, robot.spec.velocity)
            if math.isinf(t):
                violations.append(
                    PlanViolation("travel_unreachable", (rid, g.task_id, g.index))
                )
            elif g.start < anchor_time + t - 1e-6:
                violations.append(PlanViolation("travel", (rid, g.task_id, g.index)))
            anchor_time, anchor_cell = g.end, g.location
            prev_end = g.end

    for g in grounded:
        try:
            strategy = layered.strategy(g.strategy_id)
        except KeyError:
            continue
        spec = next((s for s in strategy.subtasks if s.index == g.index), None)
        if spec is None:
            continue
        for d in spec.dependencies:
            other = by_key.get((g.task_id, g.strategy_id, d))
            if other is None:
                violations.append(
                    PlanViolation("missing_dependency", (g.task_id, g.index, d))
                )
            elif g.start < other.end - EPS:
                violations.append(PlanViolation("dependency", (g.task_id, g.index, d)))
        if spec.same_robot_as is not None:
            other = by_key.get((g.task_id, g.strategy_id, spec.same_robot_as))
            if (
                other is not None
                and other.robot_id != g.robot_id
                and g.key not in committed_keys
                and other.key not in committed_keys
            ):
                violations.append(
                    PlanViolation("same_robot", (g.task_id, g.index, spec.same_robot_as))
                )

    for task_id, strategy_id in sorted(plan.selection().items()):
        try:
            strategy = layered.strategy(strategy_id)
        except KeyError:
            continue
        for s in strategy.subtasks:
            if (task_id, strategy_id, s.index) not in by_key:
                violations.append(
                    PlanViolation("incomplete_task", (task_id, strategy_id, s.index))
                )

    min_start: dict[str, float] = {}
    min_is_committed: dict[str, bool] = {}
    for g in grounded:
        if g.task_id not in min_start or g.start < min_start[g.task_id]:
            min_start[g.task_id] = g.start
            min_is_committed[g.task_id] = g.key in committed_keys
    for (h, l) in sorted(poset.precedence):
        if h not in min_start or l not in min_start:
            continue
        if min_is_committed.get(l):
            continue  # successor already started; history wins
        if min_start[l] < min_start[h] - EPS:
            violations.append(PlanViolation("start_after_start", (h, l)))

    spans: dict[str, list[tuple[float, float, int]]] = {}
    for g in grounded:
        spans.setdefault(g.task_id, []).append((g.start, g.end, g.index))
    for pair in sorted(poset.exclusion, key=sorted):
        if len(pair) != 2:
            continue
        a, b = sorted(pair)
        for (s1, e1, i1) in spans.get(a, ()):
            for (s2, e2, i2) in spans.get(b, ()):
                if _overlaps(s1, e1, s2, e2):
                    violations.append(PlanViolation("exclusion_overlap", (a, i1, b, i2)))
    return violations


@dataclass
class ReplanContext:
    """Everything repair needs about the current mission state."""

    poset: TaskPoset
    layered: LayeredDag
    fleet: list[RobotState]
    grid: GridMap
    locations: dict[str, Cell] = field(default_factory=dict)
    committed: tuple[CommittedSubtask, ...] = ()
    time_budget_s: Optional[float] = None
    paper_lb: bool = False


def repair_plan(plan: FleetPlan, event: Event, ctx: ReplanContext) -> FleetPlan:
    """Re-run the search keeping executed work fixed.

    Only replan-only event classes are accepted here; classes that alter
    the mission or the strategy pool must go through their modules first.
    """
    if event.kind not in SUBALL_ONLY_KINDS:
        raise ValueError(f"event class {event.kind!r} needs upstream handling")
    return bnb_search(
        ctx.poset,
        ctx.layered,
        ctx.fleet,
        ctx.grid,
        ctx.locations,
        time_budget_s=ctx.time_budget_s,
        committed=ctx.committed,
        paper_lb=ctx.paper_lb,
    )
