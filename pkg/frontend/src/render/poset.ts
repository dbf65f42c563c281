// Task-DAG rendering: one SVG string per payload (solid precedence
// arrows, dashed exclusion links). Pure function of the payload so it is
// trivially testable; the page swaps innerHTML on every update.

import type { PosetPayload } from "../types.js";

const NODE_W = 150;
const NODE_H = 44;
const GAP_X = 60;
const GAP_Y = 24;

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Topological columns: tasks appear one column right of their latest
 * predecessor, which reads naturally as execution order. */
function layoutColumns(payload: PosetPayload): Map<string, number> {
  const column = new Map<string, number>();
  const preds = new Map<string, string[]>();
  for (const [from, to] of payload.precedence) {
    const list = preds.get(to) ?? [];
    list.push(from);
    preds.set(to, list);
  }
  const place = (id: string, hops: Set<string>): number => {
    const cached = column.get(id);
    if (cached !== undefined) {
      return cached;
    }
    if (hops.has(id)) {
      return 0; // defensive: a cyclic payload still renders
    }
    hops.add(id);
    const depth = Math.max(
      -1,
      ...(preds.get(id) ?? []).map((p) => place(p, hops)),
    );
    column.set(id, depth + 1);
    return depth + 1;
  };
  for (const task of payload.tasks) {
    place(task.id, new Set());
  }
  return column;
}

export function renderPosetView(payload: PosetPayload): string {
  try {
    if (!Array.isArray(payload.tasks)) {
      throw new Error("tasks missing");
    }
    const columns = layoutColumns(payload);
    const rows = new Map<number, number>();
    const position = new Map<string, { x: number; y: number }>();
    for (const task of payload.tasks) {
      const col = columns.get(task.id) ?? 0;
      const row = rows.get(col) ?? 0;
      rows.set(col, row + 1);
      position.set(task.id, {
        x: 20 + col * (NODE_W + GAP_X),
        y: 20 + row * (NODE_H + GAP_Y),
      });
    }
    const width =
      40 + (Math.max(-1, ...columns.values()) + 1) * (NODE_W + GAP_X);
    const height = 40 + Math.max(1, ...rows.values()) * (NODE_H + GAP_Y);

    const parts: string[] = [];
    const edge = (
      from: string,
      to: string,
      cls: string,
      dashed: boolean,
    ): string => {
      const a = position.get(from);
      const b = position.get(to);
      if (!a || !b) {
        return "";
      }
      const x1 = a.x + NODE_W;
      const y1 = a.y + NODE_H / 2;
      const x2 = b.x;
      const y2 = b.y + NODE_H / 2;
      const dash = dashed ? ' stroke-dasharray="6 4"' : ' marker-end="url(#arrow)"';
      return (
        `<line class="${cls}" x1="${x1}" y1="${y1}" x2="${x2}" y2="${y2}"` +
        ` stroke="#555" stroke-width="1.5"${dash}/>`
      );
    };
    for (const [from, to] of payload.precedence) {
      parts.push(edge(from, to, "poset-edge poset-edge-solid", false));
    }
    for (const [a, b] of payload.exclusion) {
      parts.push(edge(a, b, "poset-edge poset-edge-dashed", true));
    }
    for (const task of payload.tasks) {
      const { x, y } = position.get(task.id)!;
      const fill = task.done ? "#d7f4d7" : "#eef3fb";
      const rank =
        task.priority_rank === null ? "" : ` r${task.priority_rank}`;
      parts.push(
        `<g class="poset-node" data-task="${escapeXml(task.id)}">` +
          `<rect x="${x}" y="${y}" width="${NODE_W}" height="${NODE_H}"` +
          ` rx="6" fill="${fill}" stroke="#345"/>` +
          `<text x="${x + 8}" y="${y + 18}" font-size="12">${escapeXml(task.id)}</text>` +
          `<text x="${x + 8}" y="${y + 34}" font-size="10" fill="#567">` +
          `${escapeXml(task.task_type)}${rank}</text></g>`,
      );
    }
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}"` +
      ` viewBox="0 0 ${width} ${height}">` +
      `<defs><marker id="arrow" markerWidth="8" markerHeight="8" refX="7" refY="3"` +
      ` orient="auto"><path d="M0,0 L7,3 L0,6 z" fill="#555"/></marker></defs>` +
      parts.join("") +
      `</svg>`
    );
  } catch (err) {
    return `<div class="error-banner">cannot render task DAG: ${escapeXml(String(err))}</div>`;
  }
}
