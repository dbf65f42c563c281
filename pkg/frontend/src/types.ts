// Payload shapes mirrored 1:1 from the orchestrator HTTP API.

export interface PosetTask {
  id: string;
  task_type: string;
  priority_rank: number | null;
  source_event: string | null;
  done: boolean;
}

export interface PosetPayload {
  tasks: PosetTask[];
  precedence: [string, string][];
  exclusion: [string, string][];
  dot: string;
}

export interface PlanBar {
  strategy_id: string;
  index: number;
  task_id: string;
  action: string;
  start_s: number;
  end_s: number;
  cell: [number, number];
}

export interface PlanPayload {
  makespan_s: number;
  optimal: boolean;
  nodes_expanded: number;
  robots: Record<string, PlanBar[]>;
}

export interface SubtaskDoc {
  index: number;
  robot_type: string;
  action: string;
  target: string;
  dependencies: number[];
  done_by_same_robot_as?: number;
  duration_override?: number;
}

export interface StrategyDoc {
  strategy_id: string;
  task_type: string;
  subtasks: SubtaskDoc[];
}

export type LayeredPayload = Record<string, StrategyDoc[]>;

export interface MetricsPayload {
  success_rate: number;
  spl: number;
  plan_time_s: number;
  plan_length: number;
  tasks_completed: number;
}

export interface StatsPayload {
  events_total: number;
  counts: Record<string, number>;
  percentages: Record<string, number>;
  llm_call_count: number;
  baseline_llm_call_count: number;
  llm_reduction: number;
}

export interface StatePayload {
  t: number;
  horizon_s: number;
  seed: number;
  map: { width: number; height: number; cell_m: number };
  robots: Record<string, { cell: [number, number]; failed: boolean; type: string }>;
  tasks_done: string[];
  policy_version: number;
  plan_makespan: number;
  pending_checkpoint: number | null;
}

export interface PendingCheckpoint {
  checkpoint_id: number;
  stage: "poset" | "layered" | "plan" | "execution";
  artifact: unknown;
  violations: string[];
}

export interface RunRecord {
  seq: number;
  t: number;
  kind: string;
  [key: string]: unknown;
}
