// Browser wiring: hydrate each view over REST, then follow /stream and
// re-hydrate whatever the incoming records mark dirty. State changes only
// render after the server confirms them; nothing is recomputed locally.

import { ApiClient } from "./api.js";
import { applyRecord, emptyModel, nextCheckpoint } from "./model.js";
import { submitDecision, submitEvent } from "./panels.js";
import { renderGantt } from "./render/gantt.js";
import { renderPosetView } from "./render/poset.js";
import type { EventForm } from "./validate.js";

const params = new URLSearchParams(window.location.search);
const api = new ApiClient(`http://${params.get("api") ?? "127.0.0.1:8008"}`);
const model = emptyModel();

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node;
}

function setBanner(text: string): void {
  el("banner").textContent = text;
}

async function refresh(view: string): Promise<void> {
  try {
    if (view === "poset") {
      el("poset").innerHTML = renderPosetView(await api.poset());
    } else if (view === "plan") {
      const plan = await api.plan();
      el("plan").innerHTML = renderGantt(plan);
      el("plan-meta").textContent =
        `makespan ${plan.makespan_s.toFixed(1)}s, ` +
        `${plan.optimal ? "optimal" : "incumbent"}, ` +
        `${plan.nodes_expanded} nodes expanded`;
    } else if (view === "metrics") {
      const metrics = await api.metrics();
      el("metrics").textContent = JSON.stringify(metrics, null, 2);
    } else if (view === "stats") {
      const stats = await api.stats();
      el("stats").textContent = JSON.stringify(stats, null, 2);
    } else if (view === "layered") {
      const layered = await api.layered();
      el("layered").textContent = JSON.stringify(layered, null, 2);
    } else if (view === "state") {
      const state = await api.state();
      el("clock").textContent = `t = ${state.t.toFixed(1)}s / ${state.horizon_s}s`;
      el("robots").textContent = Object.entries(state.robots)
        .map(
          ([rid, r]) =>
            `${rid} (${r.type}) @ ${r.cell.join(",")}${r.failed ? " FAILED" : ""}`,
        )
        .join("\n");
    }
  } catch (err) {
    setBanner(`refresh ${view} failed: ${err}`);
  }
}

function renderCheckpointPanel(): void {
  const pending = nextCheckpoint(model);
  const panel = el("checkpoint");
  if (pending === null) {
    panel.innerHTML = "<em>no pending checkpoint</em>";
    return;
  }
  panel.innerHTML = `
    <strong>checkpoint #${pending.checkpoint_id} (${pending.stage})</strong>
    <div>${pending.violations.length} validator finding(s)</div>
    <textarea id="artifact-editor" rows="14" cols="72"></textarea>
    <div>
      <button id="approve">approve</button>
      <button id="edit">submit edit</button>
      <button id="reject">reject</button>
      <input id="reason" placeholder="reason"/>
    </div>
    <div id="edit-problems" class="error-banner" hidden></div>`;
  const editor = el("artifact-editor") as HTMLTextAreaElement;
  editor.value = JSON.stringify(pending.artifact, null, 2);
  el("approve").onclick = () => {
    void submitDecision(api, pending, "approved").catch((e) => setBanner(String(e)));
  };
  el("reject").onclick = () => {
    const reason = (el("reason") as HTMLInputElement).value || "rejected";
    void submitDecision(api, pending, "rejected", { reason }).catch((e) =>
      setBanner(String(e)),
    );
  };
  el("edit").onclick = () => {
    let artifact: unknown;
    try {
      artifact = JSON.parse(editor.value);
    } catch (err) {
      showEditProblems([`not valid JSON: ${err}`]);
      return;
    }
    void submitDecision(api, pending, "edited", { artifact }).then((outcome) => {
      if (!outcome.posted) {
        showEditProblems(outcome.problems);
      }
    });
  };
}

function showEditProblems(problems: string[]): void {
  const box = el("edit-problems");
  box.hidden = false;
  box.textContent = problems.join("; ");
}

function wireEventInjector(): void {
  el("inject").onclick = async () => {
    const form: EventForm = {
      kind: (el("ev-kind") as HTMLSelectElement).value,
      task_type: (el("ev-task") as HTMLInputElement).value || undefined,
      feature: (el("ev-feature") as HTMLInputElement).value || undefined,
      robot_id: (el("ev-robot") as HTMLInputElement).value || undefined,
      cell: [
        Number((el("ev-x") as HTMLInputElement).value),
        Number((el("ev-y") as HTMLInputElement).value),
      ],
    };
    const rank = (el("ev-rank") as HTMLInputElement).value;
    if (rank !== "") {
      form.priority_rank = Number(rank);
    }
    const state = await api.state();
    const outcome = await submitEvent(api, form, state.map, state.t).catch((err) => ({
      posted: false,
      problems: [String(err)],
    }));
    setBanner(
      outcome.posted ? "event accepted" : `blocked: ${outcome.problems.join("; ")}`,
    );
  };
}

async function mainLoop(): Promise<void> {
  for (const view of ["state", "poset", "layered", "plan", "metrics", "stats"]) {
    await refresh(view);
  }
  wireEventInjector();
  renderCheckpointPanel();
  for (;;) {
    try {
      model.connection = "live";
      setBanner("stream connected");
      await api.stream((record) => {
        applyRecord(model, record);
        renderCheckpointPanel();
        if (model.dirty.size > 0) {
          const views = [...model.dirty];
          model.dirty.clear();
          for (const view of views) {
            void refresh(view);
          }
        }
      });
    } catch (err) {
      model.connection = "lost";
      setBanner(`stream lost, retrying: ${err}`);
      await new Promise((resolve) => setTimeout(resolve, 1000));
    }
  }
}

void mainLoop();
