// View model: the console renders only what the server sent. Stream
// records drive updates; pending checkpoints queue strictly FIFO.

import type { PendingCheckpoint, RunRecord } from "./types.js";

export type Connection = "connecting" | "live" | "lost";

export interface ViewModel {
  records: RunRecord[];
  checkpointQueue: PendingCheckpoint[];
  connection: Connection;
  dirty: Set<string>; // views that should re-hydrate from REST
}

export function emptyModel(): ViewModel {
  return {
    records: [],
    checkpointQueue: [],
    connection: "connecting",
    dirty: new Set(),
  };
}

const VIEW_TRIGGERS: Record<string, string[]> = {
  plan_installed: ["plan", "state", "metrics"],
  task_added: ["poset", "state"],
  task_completed: ["poset", "state", "metrics"],
  llm_call: ["layered", "stats"],
  strategy_replicated: ["layered"],
  event: ["stats", "state"],
  rollback: ["poset", "layered", "plan"],
  map_updated: ["state"],
  robot_failed: ["state"],
  run_finished: ["metrics", "stats", "state"],
};

export function applyRecord(model: ViewModel, record: RunRecord): ViewModel {
  model.records.push(record);
  for (const view of VIEW_TRIGGERS[record.kind] ?? []) {
    model.dirty.add(view);
  }
  if (record.kind === "checkpoint_pending") {
    model.checkpointQueue.push({
      checkpoint_id: record.checkpoint_id as number,
      stage: record.stage as PendingCheckpoint["stage"],
      artifact: record.artifact ?? null,
      violations: (record.violations as string[]) ?? [],
    });
  } else if (record.kind === "checkpoint") {
    const id = record.checkpoint_id as number;
    model.checkpointQueue = model.checkpointQueue.filter(
      (c) => c.checkpoint_id !== id,
    );
  }
  return model;
}

/** The checkpoint the operator must answer next: strictly first-in. */
export function nextCheckpoint(model: ViewModel): PendingCheckpoint | null {
  return model.checkpointQueue.length > 0 ? model.checkpointQueue[0] : null;
}
