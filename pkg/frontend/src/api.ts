// Thin typed client for the orchestrator HTTP/SSE API. The stream reader
// uses fetch + ReadableStream so the same code runs in the browser and in
// the node test runner.

import type {
  LayeredPayload,
  MetricsPayload,
  PendingCheckpoint,
  PlanPayload,
  PosetPayload,
  RunRecord,
  StatePayload,
  StatsPayload,
} from "./types.js";

export class ApiClient {
  constructor(public readonly base: string) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(`${this.base}${path}`);
    if (!resp.ok) {
      throw new Error(`GET ${path} failed: ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  private async postJson(path: string, body: unknown): Promise<Response> {
    return fetch(`${this.base}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  state(): Promise<StatePayload> {
    return this.getJson("/state");
  }

  poset(): Promise<PosetPayload> {
    return this.getJson("/poset");
  }

  layered(): Promise<LayeredPayload> {
    return this.getJson("/layered");
  }

  plan(): Promise<PlanPayload> {
    return this.getJson("/plan");
  }

  metrics(): Promise<MetricsPayload> {
    return this.getJson("/metrics");
  }

  stats(): Promise<StatsPayload> {
    return this.getJson("/stats");
  }

  async checkpoints(): Promise<PendingCheckpoint[]> {
    const data = await this.getJson<{ pending: PendingCheckpoint[] }>("/checkpoints");
    return data.pending;
  }

  async injectEvent(event: Record<string, unknown>): Promise<void> {
    const resp = await this.postJson("/events", event);
    if (resp.status !== 202) {
      const body = await resp.json().catch(() => ({}));
      throw new Error(`event rejected: ${resp.status} ${JSON.stringify(body)}`);
    }
  }

  async postDecision(body: Record<string, unknown>): Promise<void> {
    const resp = await this.postJson("/decisions", body);
    if (!resp.ok) {
      const payload = await resp.json().catch(() => ({}));
      throw new Error(`decision rejected: ${resp.status} ${JSON.stringify(payload)}`);
    }
  }

  async startRun(): Promise<boolean> {
    const resp = await this.postJson("/run", {});
    return resp.status === 202;
  }

  /**
   * Follow the run-log stream. Resolves when the server closes it or the
   * caller's handler returns false.
   */
  async stream(
    onRecord: (record: RunRecord) => boolean | void,
    signal?: AbortSignal,
  ): Promise<void> {
    const resp = await fetch(`${this.base}/stream`, { signal });
    if (!resp.ok || resp.body === null) {
      throw new Error(`stream failed: ${resp.status}`);
    }
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { value, done } = await reader.read();
      if (done) {
        return;
      }
      buffer += decoder.decode(value, { stream: true });
      let split = buffer.indexOf("\n\n");
      while (split >= 0) {
        const frame = buffer.slice(0, split);
        buffer = buffer.slice(split + 2);
        if (frame.startsWith("data: ")) {
          const record = JSON.parse(frame.slice(6)) as RunRecord;
          if (onRecord(record) === false) {
            await reader.cancel();
            return;
          }
        }
        split = buffer.indexOf("\n\n");
      }
    }
  }
}
