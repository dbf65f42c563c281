// Decision and event-injection flows. Validation runs before anything is
// posted: an edit that fails the schema (a dependency cycle, say) never
// reaches the server.

import type { ApiClient } from "./api.js";
import type { EventForm } from "./validate.js";
import {
  validateEventForm,
  validateLayeredArtifact,
  validateStrategy,
} from "./validate.js";
import type { PendingCheckpoint } from "./types.js";

export interface DecisionOutcome {
  posted: boolean;
  problems: string[];
}

export function validateEditedArtifact(
  stage: PendingCheckpoint["stage"],
  artifact: unknown,
): string[] {
  if (stage === "layered") {
    return validateLayeredArtifact(artifact);
  }
  if (stage === "plan" || stage === "poset" || stage === "execution") {
    // structural edits for these stages are whole-document replacements;
    // only well-formedness is checkable client side
    if (typeof artifact !== "object" || artifact === null) {
      return [`${stage} artifact must be a JSON object`];
    }
    return [];
  }
  return validateStrategy(artifact);
}

/**
 * Submit an operator decision. Edits are validated locally first and the
 * POST is skipped entirely when problems are found.
 */
export async function submitDecision(
  api: ApiClient,
  checkpoint: PendingCheckpoint,
  decision: "approved" | "edited" | "rejected",
  options: { artifact?: unknown; reason?: string; operator?: string } = {},
): Promise<DecisionOutcome> {
  if (decision === "edited") {
    const problems = validateEditedArtifact(checkpoint.stage, options.artifact);
    if (problems.length > 0) {
      return { posted: false, problems };
    }
  }
  await api.postDecision({
    checkpoint_id: checkpoint.checkpoint_id,
    decision,
    artifact: options.artifact,
    reason: options.reason ?? "",
    operator: options.operator ?? "console",
  });
  return { posted: true, problems: [] };
}

/** Validate and inject one event; problems block the POST. */
export async function submitEvent(
  api: ApiClient,
  form: EventForm,
  mapSize: { width: number; height: number },
  now: number,
): Promise<DecisionOutcome> {
  const problems = validateEventForm(form, mapSize);
  if (problems.length > 0) {
    return { posted: false, problems };
  }
  const event: Record<string, unknown> = {
    kind: form.kind,
    timestamp: now,
  };
  if (form.cell) {
    event.location = form.cell;
  }
  if (form.task_type) {
    event.task_type = form.task_type;
  }
  if (form.feature) {
    event.feature = form.feature;
    event.station = form.station ?? false;
  }
  if (form.robot_id) {
    event.robot_id = form.robot_id;
  }
  if (form.priority_rank !== undefined) {
    event.priority_rank = form.priority_rank;
  }
  if (
    ["new_task_instance", "new_priority_task_instance"].includes(form.kind)
  ) {
    event.instance_id = form.instance_id ?? `console-${Date.now()}`;
  }
  await api.injectEvent(event);
  return { posted: true, problems: [] };
}
