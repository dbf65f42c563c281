import assert from "node:assert/strict";
import { readFileSync } from "node:fs";
import { test } from "node:test";

import type { LayeredPayload, StrategyDoc } from "../src/types.js";
import {
  validateEventForm,
  validateLayeredArtifact,
  validateStrategy,
} from "../src/validate.js";

const layered = JSON.parse(
  readFileSync(new URL("../../test/fixtures/layered.json", import.meta.url), "utf-8"),
) as LayeredPayload;

const clone = <T>(value: T): T => JSON.parse(JSON.stringify(value)) as T;

test("recorded strategies all validate", () => {
  for (const strategies of Object.values(layered)) {
    for (const doc of strategies) {
      assert.deepEqual(validateStrategy(doc), []);
    }
  }
  assert.deepEqual(validateLayeredArtifact(layered), []);
});

test("dependency cycle is reported", () => {
  const doc = clone(layered.small_fire[0]);
  doc.subtasks[0].dependencies = [1];
  const problems = validateStrategy(doc);
  assert.ok(problems.some((p) => p.includes("cycle")));
});

test("self dependency is reported", () => {
  const doc = clone(layered.small_fire[0]);
  doc.subtasks[0].dependencies = [0];
  assert.ok(validateStrategy(doc).some((p) => p.includes("itself")));
});

test("same-robot type mismatch is reported", () => {
  const doc = clone(layered.injury[0]);
  const cartSub = doc.subtasks.find((s) => s.done_by_same_robot_as !== undefined)!;
  cartSub.done_by_same_robot_as = doc.subtasks.find(
    (s) => s.robot_type !== cartSub.robot_type,
  )!.index;
  assert.ok(
    validateStrategy(doc).some((p) => p.includes("different robot_type")),
  );
});

test("unknown fields are rejected", () => {
  const doc = clone(layered.explore[0]) as StrategyDoc & { vibe?: string };
  doc.vibe = "good";
  assert.ok(validateStrategy(doc).some((p) => p.includes("unknown field")));
});

test("duplicate indices are rejected", () => {
  const doc = clone(layered.small_fire[0]);
  doc.subtasks[1].index = doc.subtasks[0].index;
  assert.ok(validateStrategy(doc).some((p) => p.includes("duplicate")));
});

test("missing subtasks rejected", () => {
  const doc = clone(layered.explore[0]);
  doc.subtasks = [];
  assert.ok(validateStrategy(doc).some((p) => p.includes("non-empty")));
});

test("event form requires an in-bounds cell", () => {
  const size = { width: 12, height: 8 };
  assert.deepEqual(
    validateEventForm(
      { kind: "new_task_instance", task_type: "small_fire", cell: [4, 2] },
      size,
    ),
    [],
  );
  assert.ok(
    validateEventForm(
      { kind: "new_task_instance", task_type: "small_fire", cell: [40, 2] },
      size,
    ).some((p) => p.includes("cell")),
  );
  assert.ok(
    validateEventForm({ kind: "robot_failure" }, size).some((p) =>
      p.includes("robot_id"),
    ),
  );
});
