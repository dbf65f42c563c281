"""Staged strategy generation against a pluggable text-generation backend.

Four stages run in order: context analysis filters the scene, meta-policy
tuning updates the rule list steering later stages, the subtask guide
outlines candidate decompositions, and subtask sequences emits concrete
strategies as JSON.  Every stage output is validated closed-world: names
not present in the stage inputs are rejected.  A deterministic mock
backend driven by a rule table stands in for a remote model so the whole
pipeline runs offline.
"""

from __future__ import annotations

import hashlib
import json
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Protocol

PROMPT_VERSION = "1"
MAX_STRATEGIES_PER_TASK = 4
PIPELINE_RETRIES = 2

STAGES = (
    "context_analysis",
    "meta_policy",
    "subtask_guide",
    "subtask_sequences",
)


class StrategyError(Exception):
    pass


class BackendError(StrategyError):
    pass


class ValidationError(StrategyError):
    def __init__(self, message: str, offending: Optional[list[str]] = None):
        super().__init__(message)
        self.offending = list(offending or [])


class ParseError(StrategyError):
    pass


class StrategyParseError(StrategyError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class MissingRule(StrategyError):
    pass


class PipelineError(StrategyError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RobotSkill:
    name: str
    duration: float  # seconds


@dataclass(frozen=True)
class RobotSpec:
    id: str
    robot_type: str
    skills: tuple[RobotSkill, ...]
    velocity: float  # meters per second
    description: str = ""

    def __post_init__(self):
        if self.velocity <= 0:
            raise ValueError(f"robot {self.id}: velocity must be positive")
        names = [s.name for s in self.skills]
        if len(names) != len(set(names)):
            raise ValueError(f"robot {self.id}: duplicate skill names")
        if any(s.duration < 0 for s in self.skills):
            raise ValueError(f"robot {self.id}: negative skill duration")

    def skill_duration(self, name: str) -> Optional[float]:
        for s in self.skills:
            if s.name == name:
                return s.duration
        return None


@dataclass(frozen=True)
class SceneDescription:
    tasks: tuple[str, ...] = ()
    resources: tuple[str, ...] = ()
    history: tuple[tuple[float, str], ...] = ()
    free_text: str = ""

    def __post_init__(self):
        times = [t for (t, _) in self.history]
        if times != sorted(times):
            raise ValueError("history timestamps must be non-decreasing")

    def is_empty(self) -> bool:
        return not (self.tasks or self.resources or self.history or self.free_text)


@dataclass(frozen=True)
class MetaPolicyRule:
    condition: str
    directive: str


@dataclass(frozen=True)
class MetaPolicy:
    rules: tuple[MetaPolicyRule, ...] = ()
    version: int = 0


@dataclass(frozen=True)
class ContextSummary:
    tasks: tuple[str, ...]
    resources: tuple[str, ...]
    filtered_history: tuple[str, ...] = ()


@dataclass(frozen=True)
class GuideOutline:
    task_type: str
    steps: tuple[str, ...]
    robot_types: tuple[str, ...]
    precedence_notes: str = ""


@dataclass(frozen=True)
class SubtaskGuide:
    outlines: tuple[GuideOutline, ...]


@dataclass(frozen=True)
class SubtaskSpec:
    index: int
    action: str
    target: str
    required_robot_type: str
    same_robot_as: Optional[int] = None
    dependencies: tuple[int, ...] = ()
    duration_override: Optional[float] = None


@dataclass(frozen=True)
class StrategyDag:
    strategy_id: str
    task_type: str
    subtasks: tuple[SubtaskSpec, ...]


class GenerationBackend(Protocol):
    name: str
    is_deterministic: bool

    def complete(self, prompt: str) -> str: ...


# ---------------------------------------------------------------------------
# prompt assembly


def _template(name: str) -> str:
    return resources.files("dexter.prompts").joinpath(f"{name}.txt").read_text(
        encoding="utf-8"
    )


def _robots_block(robots: list[RobotSpec]) -> str:
    lines = ["Robots Team Description:"]
    for r in sorted(robots, key=lambda r: r.id):
        skills = ", ".join(f"{s.name} ({s.duration:g}s)" for s in r.skills)
        desc = f" {r.description}" if r.description else ""
        lines.append(
            f"- {r.id} ({r.robot_type}, {r.velocity:g} m/s):{desc} skills: {skills}."
        )
    return "\n".join(lines)


def _policy_block(policy: MetaPolicy) -> str:
    if not policy.rules:
        return f"(version {policy.version}; no rules yet)"
    lines = [f"(version {policy.version})"]
    lines += [f"- If {r.condition}, then: {r.directive}" for r in policy.rules]
    return "\n".join(lines)


def _summary_block(summary: ContextSummary) -> str:
    return json.dumps(
        {
            "tasks": list(summary.tasks),
            "resources": list(summary.resources),
            "filtered_history": list(summary.filtered_history),
        },
        sort_keys=True,
    )


def _guide_block(guide: SubtaskGuide) -> str:
    return json.dumps(
        {
            "outlines": [
                {
                    "task_type": o.task_type,
                    "steps": list(o.steps),
                    "robot_types": list(o.robot_types),
                    "precedence_notes": o.precedence_notes,
                }
                for o in guide.outlines
            ]
        },
        sort_keys=True,
    )


def build_prompt(
    stage: str,
    *,
    tasks: tuple[str, ...],
    resources: tuple[str, ...],
    robots: list[RobotSpec],
    scene: Optional[SceneDescription] = None,
    policy: Optional[MetaPolicy] = None,
    summary: Optional[ContextSummary] = None,
    guide: Optional[SubtaskGuide] = None,
    feedback: Optional[str] = None,
) -> str:
    """Assemble the full prompt for one stage.

    The leading marker block is machine readable; the mock backend keys
    its rule table on it.  Section order is fixed: instruction, robot
    team description, then the stage block.
    """
    marker = (
        f"## stage: {stage}\n"
        f"## tasks: {','.join(sorted(tasks))}\n"
        f"## resources: {','.join(sorted(resources))}\n"
        f"## prompt_version: {PROMPT_VERSION}\n"
    )
    parts = [marker, _template("instruction"), _robots_block(robots)]
    if stage == "context_analysis":
        assert scene is not None
        history = "\n".join(f"  t={t:g}: {line}" for (t, line) in scene.history)
        parts.append(
            _template("context_analysis").format(
                tasks=", ".join(scene.tasks) or "(none)",
                resources=", ".join(scene.resources) or "(none)",
                history=history or "  (empty)",
                free_text=scene.free_text or "(none)",
            )
        )
    elif stage == "meta_policy":
        assert policy is not None and summary is not None
        parts.append(
            _template("meta_policy").format(
                policy=_policy_block(policy), summary=_summary_block(summary)
            )
        )
    elif stage == "subtask_guide":
        assert policy is not None and summary is not None
        parts.append(
            _template("subtask_guide").format(
                policy=_policy_block(policy), summary=_summary_block(summary)
            )
        )
    elif stage == "subtask_sequences":
        assert policy is not None and guide is not None
        parts.append(
            _template("subtask_sequences").format(
                policy=_policy_block(policy), guide=_guide_block(guide)
            )
        )
    else:
        raise ValueError(f"unknown stage {stage!r}")
    if feedback:
        parts.append(f"Feedback on the previous answer:\n{feedback}")
    return "\n\n".join(parts)


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# backends


class MockBackend:
    """Deterministic backend: a pure function from prompt to canned output.

    The rule table maps (stage, tasks, resources) keys to structured
    outputs; tasks/resources are comma-joined sorted names or "*".
    Lookup tries exact, task-only, resource-only, then fully wildcarded
    keys and raises MissingRule if nothing matches.  A rule with
    ``"echo": true`` instead of an output synthesizes its answer from
    the prompt itself (tasks, resources and the robot team block), which
    keeps large scripted scenarios table-light.
    """

    name = "mock"
    is_deterministic = True

    def __init__(self, rule_table: dict):
        self.rules = []
        for rule in rule_table.get("rules", []):
            self.rules.append(
                (
                    rule["stage"],
                    _normalize_key(rule.get("tasks", "*")),
                    _normalize_key(rule.get("resources", "*")),
                    rule.get("output") if not rule.get("echo") else _ECHO,
                )
            )

    def complete(self, prompt: str) -> str:
        stage = _marker(prompt, "stage")
        tasks = _marker(prompt, "tasks")
        resources = _marker(prompt, "resources")
        for want_tasks, want_resources in (
            (tasks, resources),
            (tasks, "*"),
            ("*", resources),
            ("*", "*"),
        ):
            for (r_stage, r_tasks, r_resources, output) in self.rules:
                if (r_stage, r_tasks, r_resources) == (stage, want_tasks, want_resources):
                    if output is _ECHO:
                        return json.dumps(_echo_output(stage, prompt), sort_keys=True)
                    return json.dumps(output, sort_keys=True)
        raise MissingRule(f"no rule for stage={stage!r} tasks={tasks!r} resources={resources!r}")


_ECHO = object()

_ROBOT_LINE_RE = re.compile(
    r"^- (?P<id>\S+) \((?P<type>[^,]+), [^)]*\):.* skills: (?P<skills>.*)\.$",
    re.MULTILINE,
)


def _echo_output(stage: str, prompt: str) -> dict:
    tasks = [t for t in _marker(prompt, "tasks").split(",") if t]
    resources = [r for r in _marker(prompt, "resources").split(",") if r]
    if stage == "context_analysis":
        return {"tasks": tasks, "resources": resources, "filtered_history": []}
    if stage == "meta_policy":
        return {"rules": []}
    robots = []
    for m in _ROBOT_LINE_RE.finditer(prompt):
        skills = [s.strip().split(" (")[0] for s in m.group("skills").split(",")]
        robots.append((m.group("type").strip(), skills))
    if not robots:
        raise MissingRule("echo rule found no robot team block in the prompt")
    first_type, first_skills = sorted(robots)[0]
    if stage == "subtask_guide":
        return {
            "outlines": [
                {
                    "task_type": t,
                    "steps": [f"{first_skills[0]} at the task location"],
                    "robot_types": [first_type],
                    "precedence_notes": "",
                }
                for t in tasks
            ]
        }
    if stage == "subtask_sequences":
        return {
            "strategies": [
                {
                    "strategy_id": f"{t}-echo",
                    "task_type": t,
                    "subtasks": [
                        {
                            "index": 0,
                            "robot_type": first_type,
                            "action": first_skills[0],
                            "target": "@task",
                            "dependencies": [],
                        }
                    ],
                }
                for t in tasks
            ]
        }
    raise MissingRule(f"echo rule cannot serve stage {stage!r}")


def _normalize_key(value) -> str:
    if isinstance(value, str):
        if value == "*":
            return "*"
        value = [v for v in value.split(",") if v]
    return ",".join(sorted(value))


def _marker(prompt: str, key: str) -> str:
    m = re.search(rf"^## {key}: (.*)$", prompt, re.MULTILINE)
    if m is None:
        raise MissingRule(f"prompt carries no {key!r} marker")
    return m.group(1).strip()


def mock_backend(rule_table: dict) -> MockBackend:
    return MockBackend(rule_table)


class HttpBackend:
    """POSTs {prompt, max_tokens, temperature: 0} and reads {text}."""

    is_deterministic = False

    def __init__(self, url: str, timeout_s: float = 60.0, max_tokens: int = 2048):
        self.url = url
        self.timeout_s = timeout_s
        self.max_tokens = max_tokens
        self.name = f"http:{url}"

    def complete(self, prompt: str) -> str:
        body = json.dumps(
            {"prompt": prompt, "max_tokens": self.max_tokens, "temperature": 0}
        ).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise BackendError(f"backend request failed: {exc}") from exc
        if "text" not in payload:
            raise BackendError("backend response missing 'text'")
        return payload["text"]


# ---------------------------------------------------------------------------
# strategy JSON


_TOP_FIELDS = {"strategy_id", "task_type", "subtasks"}
_SUB_REQUIRED = {"index", "robot_type", "action", "target", "dependencies"}
_SUB_OPTIONAL = {"done_by_same_robot_as", "duration_override"}


def parse_strategy_json(text: str) -> StrategyDag:
    """Parse and fully validate one strategy document.

    Unknown fields are rejected, indices are normalized to 0-based
    positions, dependency cycles and same-robot type mismatches raise
    StrategyParseError naming the first violated constraint.
    """
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise StrategyParseError(f"not valid JSON: {exc}", raw=text)
    return parse_strategy_obj(doc, raw=text)


def parse_strategy_obj(doc, raw: str = "") -> StrategyDag:
    if not isinstance(doc, dict):
        raise StrategyParseError("strategy must be a JSON object", raw=raw)
    unknown = set(doc) - _TOP_FIELDS
    if unknown:
        raise StrategyParseError(f"unknown fields: {sorted(unknown)}", raw=raw)
    missing = _TOP_FIELDS - set(doc)
    if missing:
        raise StrategyParseError(f"missing fields: {sorted(missing)}", raw=raw)
    if not isinstance(doc["strategy_id"], str) or not doc["strategy_id"]:
        raise StrategyParseError("strategy_id must be a non-empty string", raw=raw)
    if not isinstance(doc["task_type"], str) or not doc["task_type"]:
        raise StrategyParseError("task_type must be a non-empty string", raw=raw)
    subs = doc["subtasks"]
    if not isinstance(subs, list) or not subs:
        raise StrategyParseError("subtasks must be a non-empty list", raw=raw)

    by_index: dict[int, dict] = {}
    for entry in subs:
        if not isinstance(entry, dict):
            raise StrategyParseError("subtask must be an object", raw=raw)
        unknown = set(entry) - _SUB_REQUIRED - _SUB_OPTIONAL
        if unknown:
            raise StrategyParseError(
                f"subtask has unknown fields: {sorted(unknown)}", raw=raw
            )
        missing = _SUB_REQUIRED - set(entry)
        if missing:
            raise StrategyParseError(
                f"subtask missing fields: {sorted(missing)}", raw=raw
            )
        idx = entry["index"]
        if not isinstance(idx, int) or isinstance(idx, bool):
            raise StrategyParseError("subtask index must be an integer", raw=raw)
        if idx in by_index:
            raise StrategyParseError(f"duplicate subtask index {idx}", raw=raw)
        by_index[idx] = entry

    # normalize arbitrary (possibly 1-based) indices to 0-based positions
    remap = {old: new for new, old in enumerate(sorted(by_index))}
    specs = []
    for old_idx in sorted(by_index):
        entry = by_index[old_idx]
        deps = entry["dependencies"]
        if not isinstance(deps, list) or any(
            not isinstance(d, int) or isinstance(d, bool) for d in deps
        ):
            raise StrategyParseError("dependencies must be a list of indices", raw=raw)
        for d in deps:
            if d not in remap:
                raise StrategyParseError(
                    f"dependency {d} references no subtask", raw=raw
                )
            if d == old_idx:
                raise StrategyParseError(
                    f"subtask {old_idx} depends on itself", raw=raw
                )
        same = entry.get("done_by_same_robot_as")
        if same is not None:
            if not isinstance(same, int) or isinstance(same, bool) or same not in remap:
                raise StrategyParseError(
                    f"done_by_same_robot_as {same!r} references no subtask", raw=raw
                )
            if by_index[same]["robot_type"] != entry["robot_type"]:
                raise StrategyParseError(
                    f"done_by_same_robot_as {same} has a different robot_type",
                    raw=raw,
                )
        override = entry.get("duration_override")
        if override is not None:
            if not isinstance(override, (int, float)) or isinstance(override, bool) or override < 0:
                raise StrategyParseError(
                    "duration_override must be a non-negative number", raw=raw
                )
        for key, want in (("robot_type", str), ("action", str), ("target", str)):
            if not isinstance(entry[key], want) or not entry[key]:
                raise StrategyParseError(
                    f"subtask {key} must be a non-empty string", raw=raw
                )
        specs.append(
            SubtaskSpec(
                index=remap[old_idx],
                action=entry["action"],
                target=entry["target"],
                required_robot_type=entry["robot_type"],
                same_robot_as=None if same is None else remap[same],
                dependencies=tuple(remap[d] for d in deps),
                duration_override=None if override is None else float(override),
            )
        )

    _check_acyclic(specs, raw)
    return StrategyDag(
        strategy_id=doc["strategy_id"],
        task_type=doc["task_type"],
        subtasks=tuple(specs),
    )


def _check_acyclic(specs: list[SubtaskSpec], raw: str) -> None:
    color: dict[int, int] = {}

    def visit(i: int) -> None:
        color[i] = 1
        for d in specs[i].dependencies:
            if color.get(d, 0) == 1:
                raise StrategyParseError(
                    f"dependency cycle through subtask {i}", raw=raw
                )
            if color.get(d, 0) == 0:
                visit(d)
        color[i] = 2

    for spec in specs:
        if color.get(spec.index, 0) == 0:
            visit(spec.index)


def strategy_to_obj(dag: StrategyDag) -> dict:
    return {
        "strategy_id": dag.strategy_id,
        "task_type": dag.task_type,
        "subtasks": [
            {
                "index": s.index,
                "robot_type": s.required_robot_type,
                "action": s.action,
                "target": s.target,
                "dependencies": list(s.dependencies),
                **(
                    {"done_by_same_robot_as": s.same_robot_as}
                    if s.same_robot_as is not None
                    else {}
                ),
                **(
                    {"duration_override": s.duration_override}
                    if s.duration_override is not None
                    else {}
                ),
            }
            for s in dag.subtasks
        ],
    }


def validate_strategy_for_fleet(dag: StrategyDag, robots: list[RobotSpec]) -> list[str]:
    """Problems that only show up against a concrete fleet, as strings."""
    problems = []
    types = {r.robot_type for r in robots}
    for s in dag.subtasks:
        if s.required_robot_type not in types:
            problems.append(
                f"{dag.strategy_id}[{s.index}]: no robot of type {s.required_robot_type!r}"
            )
            continue
        capable = [
            r
            for r in robots
            if r.robot_type == s.required_robot_type
            and r.skill_duration(s.action) is not None
        ]
        if not capable and s.duration_override is None:
            problems.append(
                f"{dag.strategy_id}[{s.index}]: no {s.required_robot_type!r} robot "
                f"has skill {s.action!r}"
            )
    return problems


# ---------------------------------------------------------------------------
# layered DAG


@dataclass
class LayeredDag:
    """Candidate strategies per task type, alongside the task poset."""

    strategies: dict[str, list[StrategyDag]] = field(default_factory=dict)

    def copy(self) -> "LayeredDag":
        return LayeredDag({k: list(v) for k, v in self.strategies.items()})

    def add(self, dag: StrategyDag) -> bool:
        """Append a strategy; returns False when skipped (dup or over cap)."""
        existing = self.strategies.setdefault(dag.task_type, [])
        for have in existing:
            if have.strategy_id == dag.strategy_id:
                if have == dag:
                    return False
                raise ValidationError(
                    f"strategy id {dag.strategy_id!r} reused with different content"
                )
        if len(existing) >= MAX_STRATEGIES_PER_TASK:
            return False
        existing.append(dag)
        return True

    def for_type(self, task_type: str) -> list[StrategyDag]:
        return list(self.strategies.get(task_type, []))

    def strategy(self, strategy_id: str) -> StrategyDag:
        for dags in self.strategies.values():
            for dag in dags:
                if dag.strategy_id == strategy_id:
                    return dag
        raise KeyError(strategy_id)

    def covers(self, task_types: set[str]) -> bool:
        return all(self.strategies.get(t) for t in task_types)

    def to_obj(self) -> dict:
        return {
            task_type: [strategy_to_obj(d) for d in dags]
            for task_type, dags in sorted(self.strategies.items())
        }


# ---------------------------------------------------------------------------
# stages


def _complete_json(backend: GenerationBackend, prompt: str) -> dict:
    text = backend.complete(prompt)
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise ParseError(f"backend answer is not JSON: {exc}")
    if not isinstance(doc, dict):
        raise ParseError("backend answer must be a JSON object")
    return doc


def stage_context_analysis(
    scene: SceneDescription,
    robots: list[RobotSpec],
    backend: GenerationBackend,
    feedback: Optional[str] = None,
) -> ContextSummary:
    """Stage I: reduce the raw scene to the still-relevant tasks/resources."""
    if scene.is_empty():
        raise ValueError("scene is empty")
    prompt = build_prompt(
        "context_analysis",
        tasks=scene.tasks,
        resources=scene.resources,
        robots=robots,
        scene=scene,
        feedback=feedback,
    )
    doc = _complete_json(backend, prompt)
    tasks = doc.get("tasks", [])
    resources = doc.get("resources", [])
    history = doc.get("filtered_history", [])
    bad = [t for t in tasks if t not in scene.tasks]
    bad += [r for r in resources if r not in scene.resources]
    known_history = {line for (_, line) in scene.history}
    bad += [h for h in history if h not in known_history]
    if bad:
        raise ValidationError(f"summary references unknown names: {bad}", bad)
    return ContextSummary(tuple(tasks), tuple(resources), tuple(history))


def stage_meta_policy_tuning(
    policy: MetaPolicy,
    summary: ContextSummary,
    backend: GenerationBackend,
    robots: Optional[list[RobotSpec]] = None,
    feedback: Optional[str] = None,
) -> MetaPolicy:
    """Stage II: rules steer later stages; version always increments."""
    prompt = build_prompt(
        "meta_policy",
        tasks=summary.tasks,
        resources=summary.resources,
        robots=robots or [],
        policy=policy,
        summary=summary,
        feedback=feedback,
    )
    doc = _complete_json(backend, prompt)
    raw_rules = doc.get("rules")
    if raw_rules is None or not isinstance(raw_rules, list):
        raise ParseError("meta policy answer needs a 'rules' list")
    if not raw_rules:
        return MetaPolicy(policy.rules, policy.version + 1)
    rules = []
    for entry in raw_rules:
        if (
            not isinstance(entry, dict)
            or not isinstance(entry.get("condition"), str)
            or not isinstance(entry.get("directive"), str)
        ):
            raise ParseError(f"malformed rule: {entry!r}")
        rules.append(MetaPolicyRule(entry["condition"], entry["directive"]))
    return MetaPolicy(tuple(rules), policy.version + 1)


def stage_subtask_guide(
    summary: ContextSummary,
    policy: MetaPolicy,
    robots: list[RobotSpec],
    backend: GenerationBackend,
    feedback: Optional[str] = None,
) -> SubtaskGuide:
    """Stage III: candidate outlines per task, closed over the fleet."""
    prompt = build_prompt(
        "subtask_guide",
        tasks=summary.tasks,
        resources=summary.resources,
        robots=robots,
        policy=policy,
        summary=summary,
        feedback=feedback,
    )
    doc = _complete_json(backend, prompt)
    raw = doc.get("outlines")
    if not isinstance(raw, list):
        raise ParseError("guide answer needs an 'outlines' list")
    declared_types = {r.robot_type for r in robots}
    outlines = []
    for entry in raw:
        if not isinstance(entry, dict):
            raise ParseError(f"malformed outline: {entry!r}")
        task_type = entry.get("task_type")
        if task_type not in summary.tasks:
            raise ValidationError(
                f"outline for unknown task {task_type!r}", [str(task_type)]
            )
        robot_types = entry.get("robot_types", [])
        unknown = [t for t in robot_types if t not in declared_types]
        if unknown:
            raise ValidationError(
                f"outline references unknown robot types: {unknown}", unknown
            )
        if not robot_types:
            raise ValidationError(
                f"NoCapableRobot: outline for {task_type!r} names no robot type",
                [task_type],
            )
        outlines.append(
            GuideOutline(
                task_type=task_type,
                steps=tuple(entry.get("steps", [])),
                robot_types=tuple(robot_types),
                precedence_notes=entry.get("precedence_notes", ""),
            )
        )
    missing = [t for t in summary.tasks if all(o.task_type != t for o in outlines)]
    if missing:
        raise ValidationError(f"no outline for tasks: {missing}", missing)
    return SubtaskGuide(tuple(outlines))


def stage_subtask_sequences(
    guide: SubtaskGuide,
    policy: MetaPolicy,
    robots: list[RobotSpec],
    backend: GenerationBackend,
    resources: tuple[str, ...] = (),
    feedback: Optional[str] = None,
) -> list[StrategyDag]:
    """Stage IV: concrete strategies, each fully validated."""
    guide_tasks = tuple(sorted({o.task_type for o in guide.outlines}))
    prompt = build_prompt(
        "subtask_sequences",
        tasks=guide_tasks,
        resources=resources,
        robots=robots,
        policy=policy,
        guide=guide,
        feedback=feedback,
    )
    doc = _complete_json(backend, prompt)
    raw = doc.get("strategies")
    if not isinstance(raw, list) or not raw:
        raise StrategyParseError("answer needs a non-empty 'strategies' list")
    dags = []
    for entry in raw:
        dag = parse_strategy_obj(entry, raw=json.dumps(entry))
        if dag.task_type not in guide_tasks:
            raise ValidationError(
                f"strategy {dag.strategy_id!r} targets unknown task {dag.task_type!r}",
                [dag.task_type],
            )
        problems = validate_strategy_for_fleet(dag, robots)
        if problems:
            raise ValidationError("; ".join(problems), problems)
        dags.append(dag)
    return dags


class _RecordingBackend:
    """Proxy that notes the hash of every prompt it forwards."""

    def __init__(self, inner: GenerationBackend):
        self.inner = inner
        self.name = inner.name
        self.is_deterministic = inner.is_deterministic
        self.hashes: list[str] = []

    def complete(self, prompt: str) -> str:
        self.hashes.append(prompt_hash(prompt))
        return self.inner.complete(prompt)


def run_generation_pipeline(
    scene: SceneDescription,
    robots: list[RobotSpec],
    policy: MetaPolicy,
    backend: GenerationBackend,
    retries: int = PIPELINE_RETRIES,
    trace: Optional[list] = None,
) -> tuple[dict[str, list[StrategyDag]], MetaPolicy]:
    """Compose the four stages; returns (strategies per task type, policy).

    A failing stage is retried with the error text appended to the
    prompt as feedback; after ``retries`` extra attempts the failure
    surfaces as PipelineError naming the stage.  The trace records the
    hash of every prompt sent, for auditable run logs.
    """
    backend = _RecordingBackend(backend)

    def attempt(stage: str, fn):
        feedback = None
        before = len(backend.hashes)
        for _ in range(retries + 1):
            try:
                result = fn(feedback)
                if trace is not None:
                    trace.append({
                        "stage": stage,
                        "ok": True,
                        "prompts": backend.hashes[before:],
                    })
                return result
            except (ValidationError, ParseError, StrategyParseError, BackendError, MissingRule) as exc:
                feedback = str(exc)
                last = exc
        if trace is not None:
            trace.append({
                "stage": stage,
                "ok": False,
                "error": str(last),
                "prompts": backend.hashes[before:],
            })
        raise PipelineError(stage, last)

    summary = attempt(
        "context_analysis",
        lambda fb: stage_context_analysis(scene, robots, backend, feedback=fb),
    )
    new_policy = attempt(
        "meta_policy",
        lambda fb: stage_meta_policy_tuning(policy, summary, backend, robots, feedback=fb),
    )
    if not summary.tasks:
        return {}, new_policy
    guide = attempt(
        "subtask_guide",
        lambda fb: stage_subtask_guide(summary, new_policy, robots, backend, feedback=fb),
    )
    dags = attempt(
        "subtask_sequences",
        lambda fb: stage_subtask_sequences(
            guide, new_policy, robots, backend,
            resources=summary.resources, feedback=fb,
        ),
    )
    delta: dict[str, list[StrategyDag]] = {}
    for dag in dags:
        delta.setdefault(dag.task_type, []).append(dag)
    return delta, new_policy
