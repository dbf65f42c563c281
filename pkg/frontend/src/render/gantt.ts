// Per-robot timeline: one row per robot, one bar per scheduled subtask,
// thin connectors over the travel/wait gaps between consecutive bars.
// Every number shown comes straight from the plan payload.

import type { PlanPayload } from "../types.js";

const ROW_H = 34;
const BAR_H = 20;
const LABEL_W = 110;

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const PALETTE = ["#7aa6d6", "#86c28a", "#d6a97a", "#c08ccb", "#d67a7a", "#7ad0cd"];

export function renderGantt(payload: PlanPayload, widthPx = 860): string {
  try {
    const robots = Object.keys(payload.robots).sort();
    const span = Math.max(payload.makespan_s, 1e-9);
    const scale = (widthPx - LABEL_W - 20) / span;
    const height = 30 + robots.length * ROW_H;
    const taskColor = new Map<string, string>();
    const colorOf = (taskId: string): string => {
      let color = taskColor.get(taskId);
      if (color === undefined) {
        color = PALETTE[taskColor.size % PALETTE.length];
        taskColor.set(taskId, color);
      }
      return color;
    };

    const parts: string[] = [];
    robots.forEach((rid, row) => {
      const y = 24 + row * ROW_H;
      parts.push(
        `<text class="gantt-robot" x="4" y="${y + BAR_H - 5}" font-size="12">` +
          `${escapeXml(rid)}</text>`,
      );
      const bars = [...payload.robots[rid]].sort((a, b) => a.start_s - b.start_s);
      let prevEnd: number | null = null;
      for (const bar of bars) {
        const x = LABEL_W + bar.start_s * scale;
        const w = Math.max(1, (bar.end_s - bar.start_s) * scale);
        if (prevEnd !== null && bar.start_s > prevEnd + 1e-9) {
          // travel / waiting gap between consecutive subtasks
          const gx = LABEL_W + prevEnd * scale;
          parts.push(
            `<line class="gantt-gap" x1="${gx}" y1="${y + BAR_H / 2}"` +
              ` x2="${x}" y2="${y + BAR_H / 2}" stroke="#999"` +
              ` stroke-width="1" stroke-dasharray="3 3"/>`,
          );
        }
        parts.push(
          `<g class="gantt-bar" data-task="${escapeXml(bar.task_id)}"` +
            ` data-start="${bar.start_s}" data-end="${bar.end_s}">` +
            `<rect x="${x}" y="${y}" width="${w}" height="${BAR_H}" rx="3"` +
            ` fill="${colorOf(bar.task_id)}" stroke="#334"/>` +
            `<title>${escapeXml(bar.task_id)}[${bar.index}] ${escapeXml(bar.action)} ` +
            `${bar.start_s.toFixed(1)}-${bar.end_s.toFixed(1)}s</title></g>`,
        );
        prevEnd = bar.end_s;
      }
    });
    const axisY = 14;
    parts.push(
      `<text x="${LABEL_W}" y="${axisY}" font-size="10" fill="#666">0s</text>`,
      `<text x="${LABEL_W + span * scale - 30}" y="${axisY}" font-size="10"` +
        ` fill="#666">${payload.makespan_s.toFixed(1)}s</text>`,
    );
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${widthPx}" height="${height}"` +
      ` viewBox="0 0 ${widthPx} ${height}">` +
      parts.join("") +
      `</svg>`
    );
  } catch (err) {
    return `<div class="error-banner">cannot render plan: ${escapeXml(String(err))}</div>`;
  }
}
