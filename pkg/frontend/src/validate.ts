// Client-side schema validation for operator-edited strategy documents.
// Mirrors the server's rules so a bad edit never leaves the console.

import type { StrategyDoc } from "./types.js";

const TOP_FIELDS = new Set(["strategy_id", "task_type", "subtasks"]);
const SUB_REQUIRED = ["index", "robot_type", "action", "target", "dependencies"];
const SUB_OPTIONAL = new Set(["done_by_same_robot_as", "duration_override"]);

export function validateStrategy(doc: unknown): string[] {
  const problems: string[] = [];
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    return ["strategy must be a JSON object"];
  }
  const obj = doc as Record<string, unknown>;
  for (const key of Object.keys(obj)) {
    if (!TOP_FIELDS.has(key)) {
      problems.push(`unknown field: ${key}`);
    }
  }
  for (const key of TOP_FIELDS) {
    if (!(key in obj)) {
      problems.push(`missing field: ${key}`);
    }
  }
  if (typeof obj.strategy_id !== "string" || !obj.strategy_id) {
    problems.push("strategy_id must be a non-empty string");
  }
  if (typeof obj.task_type !== "string" || !obj.task_type) {
    problems.push("task_type must be a non-empty string");
  }
  const subs = obj.subtasks;
  if (!Array.isArray(subs) || subs.length === 0) {
    problems.push("subtasks must be a non-empty list");
    return problems;
  }

  const byIndex = new Map<number, Record<string, unknown>>();
  for (const entry of subs) {
    if (typeof entry !== "object" || entry === null) {
      problems.push("subtask must be an object");
      continue;
    }
    const sub = entry as Record<string, unknown>;
    for (const key of Object.keys(sub)) {
      if (!SUB_REQUIRED.includes(key) && !SUB_OPTIONAL.has(key)) {
        problems.push(`subtask has unknown field: ${key}`);
      }
    }
    for (const key of SUB_REQUIRED) {
      if (!(key in sub)) {
        problems.push(`subtask missing field: ${key}`);
      }
    }
    const index = sub.index;
    if (!Number.isInteger(index)) {
      problems.push("subtask index must be an integer");
      continue;
    }
    if (byIndex.has(index as number)) {
      problems.push(`duplicate subtask index ${index}`);
      continue;
    }
    byIndex.set(index as number, sub);
  }
  if (problems.length > 0) {
    return problems;
  }

  for (const [index, sub] of byIndex) {
    const deps = sub.dependencies;
    if (!Array.isArray(deps) || deps.some((d) => !Number.isInteger(d))) {
      problems.push(`subtask ${index}: dependencies must be integer indices`);
      continue;
    }
    for (const dep of deps as number[]) {
      if (!byIndex.has(dep)) {
        problems.push(`subtask ${index}: dependency ${dep} references no subtask`);
      } else if (dep === index) {
        problems.push(`subtask ${index} depends on itself`);
      }
    }
    const same = sub.done_by_same_robot_as;
    if (same !== undefined && same !== null) {
      if (!Number.isInteger(same) || !byIndex.has(same as number)) {
        problems.push(`subtask ${index}: done_by_same_robot_as references no subtask`);
      } else if (byIndex.get(same as number)!.robot_type !== sub.robot_type) {
        problems.push(
          `subtask ${index}: done_by_same_robot_as ${same} has a different robot_type`,
        );
      }
    }
    const override = sub.duration_override;
    if (override !== undefined && override !== null) {
      if (typeof override !== "number" || override < 0) {
        problems.push(`subtask ${index}: duration_override must be >= 0`);
      }
    }
    for (const key of ["robot_type", "action", "target"]) {
      if (typeof sub[key] !== "string" || !sub[key]) {
        problems.push(`subtask ${index}: ${key} must be a non-empty string`);
      }
    }
  }
  if (problems.length > 0) {
    return problems;
  }

  // cycle check over the dependency graph
  const visiting = new Set<number>();
  const settled = new Set<number>();
  const visit = (index: number): boolean => {
    if (settled.has(index)) {
      return true;
    }
    if (visiting.has(index)) {
      return false;
    }
    visiting.add(index);
    const deps = (byIndex.get(index)!.dependencies as number[]) ?? [];
    for (const dep of deps) {
      if (!visit(dep)) {
        return false;
      }
    }
    visiting.delete(index);
    settled.add(index);
    return true;
  };
  for (const index of byIndex.keys()) {
    if (!visit(index)) {
      problems.push(`dependency cycle through subtask ${index}`);
      break;
    }
  }
  return problems;
}

/** Validate an edited layered artifact: every strategy of every type. */
export function validateLayeredArtifact(artifact: unknown): string[] {
  if (typeof artifact !== "object" || artifact === null || Array.isArray(artifact)) {
    return ["layered artifact must map task types to strategy lists"];
  }
  const problems: string[] = [];
  for (const [taskType, strategies] of Object.entries(
    artifact as Record<string, unknown>,
  )) {
    if (!Array.isArray(strategies) || strategies.length === 0) {
      problems.push(`task type ${taskType}: needs a non-empty strategy list`);
      continue;
    }
    for (const doc of strategies) {
      for (const problem of validateStrategy(doc)) {
        problems.push(`${taskType}: ${problem}`);
      }
    }
  }
  return problems;
}

export interface EventForm {
  kind: string;
  task_type?: string;
  feature?: string;
  robot_id?: string;
  priority_rank?: number;
  station?: boolean;
  cell?: [number, number];
  instance_id?: string;
}

/** Problems with an event-injection form, before anything leaves the page. */
export function validateEventForm(
  form: EventForm,
  mapSize: { width: number; height: number },
): string[] {
  const problems: string[] = [];
  const needsCell = [
    "new_task_instance",
    "new_priority_task_instance",
    "new_task_type",
    "new_feature_type",
    "new_feature_instance",
  ];
  if (needsCell.includes(form.kind)) {
    const cell = form.cell;
    if (
      !cell ||
      !Number.isInteger(cell[0]) ||
      !Number.isInteger(cell[1]) ||
      cell[0] < 0 ||
      cell[1] < 0 ||
      cell[0] >= mapSize.width ||
      cell[1] >= mapSize.height
    ) {
      problems.push("cell must be inside the map");
    }
  }
  if (
    ["new_task_instance", "new_priority_task_instance"].includes(form.kind) &&
    !form.task_type
  ) {
    problems.push("task_type is required");
  }
  if (form.kind === "new_priority_task_instance" && !Number.isInteger(form.priority_rank)) {
    problems.push("priority_rank is required");
  }
  if (
    ["new_feature_type", "new_feature_instance"].includes(form.kind) &&
    !form.feature
  ) {
    problems.push("feature is required");
  }
  if (form.kind === "robot_failure" && !form.robot_id) {
    problems.push("robot_id is required");
  }
  return problems;
}
