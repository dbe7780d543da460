// Training metric charts. Chart geometry is decoration; the numbers
// that matter are attached verbatim as data-values JSON so they can be
// checked against the history byte-for-byte, and no smoothing or
// interpolation happens anywhere. A break in the epoch sequence breaks
// the line; a non-finite value becomes a warning marker instead of a
// point.

import { clear, el, svgEl } from "../dom.js";
import type { MetricsRecord } from "../types.js";

const CHART_W = 320;
const CHART_H = 120;
const PAD = 10;

const PALETTE = ["#2563eb", "#dc2626", "#059669", "#d97706", "#7c3aed", "#0891b2"];

export type Point = [number, number | null]; // [epoch, value]; null = non-finite

export interface Series {
  name: string; // e.g. "train" or "val iou[1]"
  points: Point[];
}

function finiteOrNull(v: unknown): number | null {
  return typeof v === "number" && Number.isFinite(v) ? v : null;
}

/** Pull one metric's series out of the history, per split, in record
 *  order. `metric` is a task-metric name, "iou[c]", or "total_loss". */
export function extractSeries(
  history: MetricsRecord[],
  task: string | null,
  metric: string,
): Series[] {
  const bySplit = new Map<string, Point[]>();
  const iouMatch = metric.match(/^iou\[(\d+)\]$/);
  for (const rec of history) {
    let raw: unknown;
    if (metric === "total_loss") {
      raw = rec.total_loss;
    } else {
      const tm = task === null ? undefined : rec.tasks[task];
      if (tm === undefined) continue;
      raw = iouMatch ? tm.iou[Number(iouMatch[1])] : tm[metric];
    }
    let pts = bySplit.get(rec.split);
    if (!pts) {
      pts = [];
      bySplit.set(rec.split, pts);
    }
    pts.push([rec.epoch, finiteOrNull(raw)]);
  }
  return [...bySplit.entries()].map(([split, points]) => ({ name: split, points }));
}

/** Consecutive runs of finite points with epoch step exactly 1; a
 *  missing epoch or a null value ends the run. */
export function segments(points: Point[]): Point[][] {
  const out: Point[][] = [];
  let run: Point[] = [];
  let prevEpoch: number | null = null;
  for (const [epoch, value] of points) {
    const contiguous = prevEpoch !== null && epoch === prevEpoch + 1;
    if (value === null || (run.length > 0 && !contiguous)) {
      if (run.length) out.push(run);
      run = value === null ? [] : [[epoch, value]];
    } else {
      run.push([epoch, value]);
    }
    prevEpoch = epoch;
  }
  if (run.length) out.push(run);
  return out;
}

function drawChart(title: string, metric: string, task: string | null, series: Series[]): HTMLElement {
  const section = el("section", { class: "chart", "data-metric": metric });
  if (task !== null) section.setAttribute("data-task", task);
  section.appendChild(el("h3", { text: title }));

  const svg = svgEl("svg", {
    width: String(CHART_W),
    height: String(CHART_H),
    viewBox: `0 0 ${CHART_W} ${CHART_H}`,
  });

  const epochs: number[] = [];
  const values: number[] = [];
  for (const s of series) {
    for (const [e, v] of s.points) {
      epochs.push(e);
      if (v !== null) values.push(v);
    }
  }
  const eLo = epochs.length ? Math.min(...epochs) : 0;
  const eSpan = (epochs.length ? Math.max(...epochs) : 1) - eLo || 1;
  const yLo = values.length ? Math.min(...values) : 0;
  const ySpan = (values.length ? Math.max(...values) : 1) - yLo || 1;
  const px = (e: number): number => PAD + ((e - eLo) / eSpan) * (CHART_W - 2 * PAD);
  const py = (v: number): number => CHART_H - PAD - ((v - yLo) / ySpan) * (CHART_H - 2 * PAD);

  series.forEach((s, si) => {
    const color = PALETTE[si % PALETTE.length];
    const group = svgEl("g", { class: "series", "data-series": s.name });
    group.setAttribute("data-values", JSON.stringify(s.points));
    for (const seg of segments(s.points)) {
      if (seg.length === 1) {
        const [e, v] = seg[0];
        group.appendChild(
          svgEl("circle", { cx: String(px(e)), cy: String(py(v!)), r: "2", fill: color }),
        );
        continue;
      }
      const coords = seg.map(([e, v]) => `${px(e)},${py(v!)}`).join(" ");
      group.appendChild(
        svgEl("polyline", { points: coords, fill: "none", stroke: color, "stroke-width": "1.5" }),
      );
    }
    for (const [e, v] of s.points) {
      if (v !== null) continue;
      const marker = svgEl("circle", {
        class: "nan-marker",
        cx: String(px(e)),
        cy: String(PAD),
        r: "3",
        fill: "#dc2626",
        "data-epoch": String(e),
        "data-series": s.name,
      });
      group.appendChild(marker);
    }
    svg.appendChild(group);
  });

  const legend = el("div", { class: "legend" });
  series.forEach((s, si) => {
    legend.appendChild(
      el("span", { class: "legend-item", style: `color:${PALETTE[si % PALETTE.length]}` }, s.name),
    );
  });

  section.appendChild(svg);
  section.appendChild(legend);
  return section;
}

const TASK_METRICS = ["mean_loss", "f1", "fiou", "precision", "recall"];

export function renderMetrics(
  container: HTMLElement,
  experimentId: string,
  history: MetricsRecord[],
): void {
  clear(container);
  container.appendChild(el("h2", { text: `Metrics: ${experimentId}` }));

  if (!history.length) {
    container.appendChild(el("div", { class: "empty-state", text: "No metrics recorded yet." }));
    return;
  }

  // headline number: last validation line's total loss, verbatim
  let lastVal: MetricsRecord | null = null;
  for (const rec of history) if (rec.split === "val") lastVal = rec;
  if (lastVal) {
    const shown = finiteOrNull(lastVal.total_loss);
    container.appendChild(
      el(
        "div",
        { class: "final-val-loss", "data-epoch": String(lastVal.epoch) },
        "final val loss: ",
        el("span", { class: "value", text: shown === null ? "not finite" : String(shown) }),
      ),
    );
  }

  const taskNames = new Set<string>();
  for (const rec of history) for (const name of Object.keys(rec.tasks)) taskNames.add(name);

  container.appendChild(
    drawChart("total loss", "total_loss", null, extractSeries(history, null, "total_loss")),
  );

  for (const task of taskNames) {
    for (const metric of TASK_METRICS) {
      container.appendChild(
        drawChart(`${task}: ${metric}`, metric, task, extractSeries(history, task, metric)),
      );
    }
    // one line per class for the intersection-over-union list
    let classCount = 0;
    for (const rec of history) {
      const tm = rec.tasks[task];
      if (tm) classCount = Math.max(classCount, tm.iou.length);
    }
    const iouSeries: Series[] = [];
    for (let c = 0; c < classCount; c++) {
      for (const s of extractSeries(history, task, `iou[${c}]`)) {
        iouSeries.push({ name: `${s.name} iou[${c}]`, points: s.points });
      }
    }
    const sec = drawChart(`${task}: iou`, "iou", task, iouSeries);
    container.appendChild(sec);
  }
}
