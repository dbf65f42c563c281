"""Mission comprehension: reactive-template decomposition and the task poset.

A mission is an LTL formula over named propositions plus a binding table
that says which propositions are robot skills (and therefore tasks) and
which are pure observations.  The formula is split into a nominal part
and a list of (trigger -> eventually response) reactions; active
reactions contribute task instances to a partially ordered task set with
precedence (start-after-start) and exclusion (no temporal overlap)
relations, encoded as a labeled DAG.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .ltl import (
    And,
    Always,
    Atom,
    Eventually,
    Formula,
    Implies,
    atoms,
    conjoin,
    conjuncts,
    is_propositional,
    parse_ltl,
)


class MissionError(Exception):
    pass


class MissionFileError(MissionError):
    pass


class UnknownEvent(MissionError):
    pass


class UnknownTaskType(MissionError):
    pass


@dataclass(frozen=True)
class PropositionBinding:
    """How a proposition name grounds into the world."""

    kind: str  # "observation" or "skill"
    task_type: Optional[str] = None  # required when kind == "skill"
    priority_rank: Optional[int] = None  # 0 = highest priority


@dataclass(frozen=True)
class Reaction:
    event_id: str
    trigger: Formula  # propositional
    response: Formula


@dataclass(frozen=True)
class MissionSpec:
    nominal: Optional[Formula]
    reactions: tuple[Reaction, ...]
    propositions: dict[str, PropositionBinding] = field(default_factory=dict)
    exclusions: tuple[tuple[str, str], ...] = ()

    def reaction(self, event_id: str) -> Reaction:
        for r in self.reactions:
            if r.event_id == event_id:
                return r
        raise UnknownEvent(f"no reaction with event id {event_id!r}")

    def skill_types(self) -> list[str]:
        """Task types of all skill-tagged propositions, in declaration order."""
        seen = []
        for binding in self.propositions.values():
            if binding.kind == "skill" and binding.task_type not in seen:
                seen.append(binding.task_type)
        return seen

    def default_rank(self, task_type: str) -> Optional[int]:
        """The priority rank plain instances of this type inherit."""
        for binding in self.propositions.values():
            if binding.kind == "skill" and binding.task_type == task_type:
                return binding.priority_rank
        return None


def decompose_template(f: Formula) -> MissionSpec:
    """Split a formula into nominal obligations and triggered reactions.

    Each top-level conjunct either matches the reactive template
    G(trigger -> F response) with a propositional trigger, or stays
    nominal.  A conjunct G(a && b && ...) is distributed into G a,
    G b, ... first, and each piece classified on its own.  Conjuncts
    matching neither pattern are kept nominal rather than rejected.
    """
    nominal_parts: list[Formula] = []
    reactions: list[Reaction] = []
    pieces: list[Formula] = []
    for c in conjuncts(f):
        if isinstance(c, Always) and isinstance(c.sub, And):
            pieces.extend(Always(inner) for inner in conjuncts(c.sub))
        else:
            pieces.append(c)
    for piece in pieces:
        if (
            isinstance(piece, Always)
            and isinstance(piece.sub, Implies)
            and isinstance(piece.sub.right, Eventually)
            and is_propositional(piece.sub.left)
        ):
            reactions.append(
                Reaction(
                    event_id=f"e{len(reactions) + 1}",
                    trigger=piece.sub.left,
                    response=piece.sub.right,
                )
            )
        else:
            nominal_parts.append(piece)
    nominal = conjoin(nominal_parts) if nominal_parts else None
    return MissionSpec(nominal=nominal, reactions=tuple(reactions))


def load_mission(data: dict) -> MissionSpec:
    """Build a MissionSpec from a mission-file dict (see README schema)."""
    if "ltl" not in data:
        raise MissionFileError("mission file missing 'ltl'")
    spec = decompose_template(parse_ltl(data["ltl"]))
    bindings: dict[str, PropositionBinding] = {}
    for name, raw in data.get("propositions", {}).items():
        kind = raw.get("kind")
        if kind not in ("observation", "skill"):
            raise MissionFileError(
                f"proposition {name!r}: kind must be observation or skill"
            )
        if kind == "skill" and not raw.get("task_type"):
            raise MissionFileError(f"skill proposition {name!r} needs a task_type")
        bindings[name] = PropositionBinding(
            kind=kind,
            task_type=raw.get("task_type"),
            priority_rank=raw.get("priority_rank"),
        )
    exclusions = []
    for pair in data.get("exclusions", []):
        if len(pair) != 2:
            raise MissionFileError(f"exclusion pair must have 2 names: {pair!r}")
        for name in pair:
            binding = bindings.get(name)
            if binding is None or binding.kind != "skill":
                raise MissionFileError(
                    f"exclusion references non-skill proposition {name!r}"
                )
        exclusions.append((pair[0], pair[1]))
    return replace(spec, propositions=bindings, exclusions=tuple(exclusions))


@dataclass(frozen=True)
class TaskNode:
    id: str
    task_type: str
    priority_rank: Optional[int] = None
    source_event: Optional[str] = None


@dataclass(frozen=True)
class PosetViolation:
    kind: str  # "cycle", "reflexive_exclusion", "dangling"
    detail: tuple

    def __str__(self) -> str:
        return f"{self.kind}{self.detail}"


def CycleViolation(cycle: list[str]) -> PosetViolation:
    return PosetViolation("cycle", tuple(cycle))


def ReflexiveExclusion(task_id: str) -> PosetViolation:
    return PosetViolation("reflexive_exclusion", (task_id,))


def DanglingReference(relation: str, edge: tuple) -> PosetViolation:
    return PosetViolation("dangling", (relation,) + tuple(edge))


@dataclass(frozen=True)
class TaskPoset:
    """Tasks plus start-after-start precedence and mutual-exclusion pairs."""

    tasks: tuple[TaskNode, ...] = ()
    precedence: frozenset[tuple[str, str]] = frozenset()
    exclusion: frozenset[frozenset[str]] = frozenset()
    known_types: frozenset[str] = frozenset()
    counters: tuple[tuple[str, int], ...] = ()  # per-type id counters, never reused

    def task_ids(self) -> list[str]:
        return [t.id for t in self.tasks]

    def node(self, task_id: str) -> TaskNode:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)

    def by_type(self, task_type: str) -> list[TaskNode]:
        return [t for t in self.tasks if t.task_type == task_type]

    def successors(self, task_id: str) -> list[str]:
        return sorted(b for (a, b) in self.precedence if a == task_id)

    def predecessors(self, task_id: str) -> list[str]:
        return sorted(a for (a, b) in self.precedence if b == task_id)


def _next_id(poset: TaskPoset, task_type: str) -> tuple[str, TaskPoset]:
    counters = dict(poset.counters)
    n = counters.get(task_type, 0)
    counters[task_type] = n + 1
    new = replace(poset, counters=tuple(sorted(counters.items())))
    return f"{task_type}#{n}", new


def _reachable(edges: frozenset[tuple[str, str]], src: str, dst: str) -> bool:
    frontier = [src]
    seen = {src}
    while frontier:
        cur = frontier.pop()
        if cur == dst:
            return True
        for (a, b) in edges:
            if a == cur and b not in seen:
                seen.add(b)
                frontier.append(b)
    return False


def _add_rank_edges(poset: TaskPoset, new_node: TaskNode) -> TaskPoset:
    """Precedence between ranked instances of one task type.

    Lower rank number means higher priority and must start first.  An
    edge is skipped when it would close a cycle against edges already
    present (nested-response edges win over rank edges).
    """
    if new_node.priority_rank is None:
        return poset
    edges = set(poset.precedence)
    for other in poset.tasks:
        if other.id == new_node.id or other.task_type != new_node.task_type:
            continue
        if other.priority_rank is None or other.priority_rank == new_node.priority_rank:
            continue
        if other.priority_rank < new_node.priority_rank:
            edge = (other.id, new_node.id)
        else:
            edge = (new_node.id, other.id)
        if not _reachable(frozenset(edges), edge[1], edge[0]):
            edges.add(edge)
    return replace(poset, precedence=frozenset(edges))


def _append_task(
    poset: TaskPoset,
    task_type: str,
    priority_rank: Optional[int],
    source_event: Optional[str],
) -> tuple[str, TaskPoset]:
    task_id, poset = _next_id(poset, task_type)
    node = TaskNode(task_id, task_type, priority_rank, source_event)
    poset = replace(poset, tasks=poset.tasks + (node,))
    poset = _add_rank_edges(poset, node)
    return task_id, poset


def _response_tasks(
    poset: TaskPoset,
    spec: MissionSpec,
    response: Formula,
    event_id: str,
) -> TaskPoset:
    """Create tasks for the skill propositions of one triggered response.

    Nested F(a && F b) patterns yield precedence (task(a), task(b)):
    every task of the inner eventuality starts after every task of the
    enclosing level.
    """

    def emit(f: Formula, after: list[str], poset: TaskPoset) -> tuple[list[str], TaskPoset]:
        if isinstance(f, Eventually):
            return emit(f.sub, after, poset)
        if isinstance(f, Atom):
            binding = spec.propositions.get(f.name)
            if binding is None or binding.kind != "skill":
                return [], poset
            tid, poset = _append_task(
                poset, binding.task_type, binding.priority_rank, event_id
            )
            edges = set(poset.precedence)
            edges.update((a, tid) for a in after)
            return [tid], replace(poset, precedence=frozenset(edges))
        if isinstance(f, And):
            now: list[str] = []
            nested = []
            for part in conjuncts(f):
                if isinstance(part, Eventually):
                    nested.append(part)
                else:
                    created, poset = emit(part, after, poset)
                    now.extend(created)
            for part in nested:
                _, poset = emit(part, now if now else after, poset)
            return now, poset
        # other shapes (negations, disjunctions): tasks for any skill atoms,
        # no ordering inferred
        created: list[str] = []
        for name in sorted(atoms(f)):
            made, poset = emit(Atom(name), after, poset)
            created.extend(made)
        return created, poset

    _, poset = emit(response, [], poset)
    return poset


def _exclusion_pairs(poset: TaskPoset, spec: MissionSpec) -> TaskPoset:
    pairs = set(poset.exclusion)
    for (p, q) in spec.exclusions:
        type_p = spec.propositions[p].task_type
        type_q = spec.propositions[q].task_type
        for a in poset.by_type(type_p):
            for b in poset.by_type(type_q):
                if a.id != b.id:
                    pairs.add(frozenset((a.id, b.id)))
    return replace(poset, exclusion=frozenset(pairs))


def build_task_poset(spec: MissionSpec, active_events: list[str]) -> TaskPoset:
    """Instantiate the task poset for the nominal mission plus active events.

    Every skill proposition of the nominal formula yields one task;
    each entry of ``active_events`` (repeats allowed) instantiates the
    tasks of that reaction's response.  Raises UnknownEvent for ids
    without a matching reaction.
    """
    known = frozenset(
        b.task_type for b in spec.propositions.values() if b.kind == "skill"
    )
    poset = TaskPoset(known_types=known)
    if spec.nominal is not None:
        seen: list[str] = []
        for node in _ordered_atoms(spec.nominal):
            if node in seen:
                continue
            seen.append(node)
            binding = spec.propositions.get(node)
            if binding is not None and binding.kind == "skill":
                _, poset = _append_task(
                    poset, binding.task_type, binding.priority_rank, None
                )
    for event_id in active_events:
        reaction = spec.reaction(event_id)
        poset = _response_tasks(poset, spec, reaction.response, event_id)
    poset = _exclusion_pairs(poset, spec)
    return poset


def _ordered_atoms(f: Formula) -> list[str]:
    from .ltl import walk

    out = []
    for node in walk(f):
        if isinstance(node, Atom) and node.name not in out:
            out.append(node.name)
    return out


def add_task_instance(
    poset: TaskPoset,
    task_type: str,
    priority_rank: Optional[int] = None,
    source_event: Optional[str] = None,
) -> TaskPoset:
    """Add one task instance of a known type, wiring rank-based precedence."""
    if task_type not in poset.known_types and not poset.by_type(task_type):
        raise UnknownTaskType(f"task type {task_type!r} is not declared")
    _, poset = _append_task(poset, task_type, priority_rank, source_event)
    return poset


def _find_cycle(ids: list[str], edges: frozenset[tuple[str, str]]) -> Optional[list[str]]:
    succ: dict[str, list[str]] = {i: [] for i in ids}
    for (a, b) in edges:
        if a in succ and b in succ:
            succ[a].append(b)
    color: dict[str, int] = {}
    stack_path: list[str] = []

    def visit(u: str) -> Optional[list[str]]:
        color[u] = 1
        stack_path.append(u)
        for v in sorted(succ[u]):
            if color.get(v, 0) == 1:
                return stack_path[stack_path.index(v):]
            if color.get(v, 0) == 0:
                found = visit(v)
                if found:
                    return found
        stack_path.pop()
        color[u] = 2
        return None

    for i in sorted(ids):
        if color.get(i, 0) == 0:
            found = visit(i)
            if found:
                return found
    return None


def validate_poset(poset: TaskPoset) -> list[PosetViolation]:
    """Empty list iff the poset invariants hold; violations are data."""
    violations: list[PosetViolation] = []
    ids = set(poset.task_ids())
    for (a, b) in sorted(poset.precedence):
        if a not in ids or b not in ids:
            violations.append(DanglingReference("precedence", (a, b)))
    for pair in sorted(poset.exclusion, key=sorted):
        members = sorted(pair)
        if len(members) == 1:
            violations.append(ReflexiveExclusion(members[0]))
            continue
        for m in members:
            if m not in ids:
                violations.append(DanglingReference("exclusion", tuple(members)))
                break
    cycle = _find_cycle(sorted(ids), poset.precedence)
    if cycle:
        violations.append(CycleViolation(cycle))
    return violations


def topological_order(poset: TaskPoset) -> list[str]:
    """Task ids in a deterministic precedence-respecting order."""
    ids = poset.task_ids()
    incoming = {i: set(poset.predecessors(i)) for i in ids}
    order: list[str] = []
    ready = sorted(i for i in ids if not incoming[i])
    while ready:
        cur = ready.pop(0)
        order.append(cur)
        for succ in poset.successors(cur):
            incoming[succ].discard(cur)
            if not incoming[succ] and succ not in order and succ not in ready:
                ready.append(succ)
        ready.sort()
    if len(order) != len(ids):
        raise MissionError("precedence relation is cyclic")
    return order


def poset_to_dot(poset: TaskPoset) -> str:
    """Deterministic DOT text: solid precedence edges, dashed exclusions."""
    lines = ["digraph poset {"]
    for node in sorted(poset.tasks, key=lambda t: t.id):
        label = f"{node.id}\\n{node.task_type}"
        if node.priority_rank is not None:
            label += f" r{node.priority_rank}"
        lines.append(f'  "{node.id}" [label="{label}"];')
    for (a, b) in sorted(poset.precedence):
        lines.append(f'  "{a}" -> "{b}";')
    for pair in sorted(poset.exclusion, key=sorted):
        a, b = sorted(pair)
        lines.append(f'  "{a}" -> "{b}" [dir=none, style=dashed];')
    lines.append("}")
    return "\n".join(lines) + "\n"
