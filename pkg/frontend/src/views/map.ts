// Slippy map over the global zoom-24 pixel grid. The base layer is a
// client-drawn coordinate grid (works offline); the overlay layer is
// heatmap tiles served per task/class by the prediction endpoint.
// Dragging in draw mode posts a prediction job for the chosen region.

import { clear, el } from "../dom.js";
import {
  MAP_SIZE,
  screenToWorld,
  UiSession,
  visibleTiles,
  worldToLonLat,
} from "../session.js";
import type { Job } from "../types.js";

export interface TaskSpec {
  task_name: string;
  class_count: number;
}

export interface MapHandlers {
  tileUrl: (task: string, classIndex: number, x: number, y: number) => string;
  onPredict: (bbox: [number, number, number, number]) => void;
}

// beyond this the viewport is too far out for per-tile imagery
const MAX_OVERLAY_TILES = 256;
const MIN_DRAG_PX = 5;

/** Alpha-mask RGBA pixels in place: confidence below the threshold
 *  becomes transparent. A threshold of 1.0 blanks everything, matching
 *  the whole-overlay hide in the view. */
export function applyThreshold(data: Uint8ClampedArray, threshold: number): void {
  if (threshold <= 0) return;
  for (let i = 0; i < data.length; i += 4) {
    const conf = data[i] / 255; // grayscale tile: any channel works
    if (threshold >= 1 || conf < threshold) data[i + 3] = 0;
  }
}

function rebinarize(img: HTMLImageElement, threshold: number): void {
  if (threshold <= 0) return;
  img.setAttribute("data-threshold", String(threshold));
  img.addEventListener("load", () => {
    const canvas = document.createElement("canvas");
    canvas.width = img.naturalWidth;
    canvas.height = img.naturalHeight;
    const ctx = canvas.getContext("2d");
    if (!ctx) return; // no raster access here; tile stays as served
    ctx.drawImage(img, 0, 0);
    const pixels = ctx.getImageData(0, 0, canvas.width, canvas.height);
    applyThreshold(pixels.data, threshold);
    ctx.putImageData(pixels, 0, 0);
    img.src = canvas.toDataURL();
  }, { once: true });
}

export function renderMap(
  container: HTMLElement,
  session: UiSession,
  tasks: TaskSpec[],
  jobs: Job[],
  handlers: MapHandlers,
): void {
  clear(container);

  // ---- controls -------------------------------------------------------
  const controls = el("div", { class: "map-controls" });

  const taskSelect = el("select", { class: "task-select" });
  for (const t of tasks) {
    taskSelect.appendChild(el("option", { value: t.task_name, text: t.task_name }));
  }
  if (session.overlay.task === null && tasks.length) {
    session.overlay.task = tasks[0].task_name;
  }
  if (session.overlay.task !== null) taskSelect.value = session.overlay.task;

  const classSelect = el("select", { class: "class-select" });
  const fillClasses = (): void => {
    clear(classSelect);
    const spec = tasks.find((t) => t.task_name === session.overlay.task);
    const count = spec ? spec.class_count : 2;
    for (let c = 0; c < count; c++) {
      classSelect.appendChild(el("option", { value: String(c), text: `class ${c}` }));
    }
    if (session.overlay.classIndex >= count) session.overlay.classIndex = count - 1;
    classSelect.value = String(session.overlay.classIndex);
  };
  fillClasses();

  const opacity = el("input", {
    type: "range", class: "opacity-slider", min: "0", max: "1", step: "0.05",
    value: String(session.overlay.opacity),
  });
  const threshold = el("input", {
    type: "range", class: "threshold-slider", min: "0", max: "1", step: "0.05",
    value: String(session.overlay.threshold),
  });
  const drawBtn = el("button", { class: "bbox-btn", text: "Draw region" });
  const zoomIn = el("button", { class: "zoom-in", text: "+" });
  const zoomOut = el("button", { class: "zoom-out", text: "-" });

  controls.append(
    el("label", { text: "task " }, taskSelect),
    el("label", { text: "class " }, classSelect),
    el("label", { text: "opacity " }, opacity),
    el("label", { text: "threshold " }, threshold),
    drawBtn, zoomIn, zoomOut,
  );
  container.appendChild(controls);

  // ---- layers ---------------------------------------------------------
  const surface = el("div", {
    class: "map-surface",
    style: `width:${MAP_SIZE}px;height:${MAP_SIZE}px`,
  });
  const baseLayer = el("div", { class: "base-layer" });
  const overlayLayer = el("div", { class: "overlay-layer" });
  const rubber = el("div", { class: "bbox-rect", style: "display:none" });
  surface.append(baseLayer, overlayLayer, rubber);
  container.appendChild(surface);

  const renderBase = (): void => {
    clear(baseLayer);
    const placements = visibleTiles(session.viewport);
    if (placements.length > 4096) return; // way zoomed out; grid is noise
    for (const p of placements) {
      const cell = el("div", {
        class: "grid-tile",
        style: `left:${p.screenX}px;top:${p.screenY}px;width:${p.size}px;height:${p.size}px`,
      });
      if (p.size >= 64) cell.textContent = `${p.tileX},${p.tileY}`;
      baseLayer.appendChild(cell);
    }
  };

  const renderOverlay = (): void => {
    clear(overlayLayer);
    const ov = session.overlay;
    if (ov.threshold >= 1) {
      overlayLayer.classList.add("fully-transparent");
      overlayLayer.style.opacity = "0";
      return;
    }
    overlayLayer.classList.remove("fully-transparent");
    overlayLayer.style.opacity = String(ov.opacity);
    if (!ov.jobId || !ov.task) return;
    const placements = visibleTiles(session.viewport);
    if (placements.length > MAX_OVERLAY_TILES) return;
    for (const p of placements) {
      const img = el("img", {
        class: "heatmap-tile",
        src: handlers.tileUrl(ov.task, ov.classIndex, p.tileX, p.tileY),
        style: `left:${p.screenX}px;top:${p.screenY}px;width:${p.size}px;height:${p.size}px`,
      });
      // a tile outside the predicted region 404s; that spot stays clear
      img.addEventListener("error", () => {
        img.style.visibility = "hidden";
      });
      rebinarize(img, ov.threshold);
      overlayLayer.appendChild(img);
    }
  };

  renderBase();
  renderOverlay();

  // ---- control wiring -------------------------------------------------
  taskSelect.addEventListener("change", () => {
    session.overlay.task = taskSelect.value;
    fillClasses();
    renderOverlay();
  });
  classSelect.addEventListener("change", () => {
    session.overlay.classIndex = Number(classSelect.value);
    renderOverlay();
  });
  opacity.addEventListener("input", () => {
    session.overlay.opacity = Number(opacity.value);
    renderOverlay();
  });
  threshold.addEventListener("input", () => {
    session.overlay.threshold = Number(threshold.value);
    renderOverlay();
  });
  zoomIn.addEventListener("click", () => {
    session.zoomBy(1);
    renderBase();
    renderOverlay();
  });
  zoomOut.addEventListener("click", () => {
    session.zoomBy(-1);
    renderBase();
    renderOverlay();
  });

  let drawMode = false;
  drawBtn.addEventListener("click", () => {
    drawMode = !drawMode;
    drawBtn.classList.toggle("active", drawMode);
  });

  // ---- drag: pan, or rubber-band a prediction region ------------------
  let dragStart: [number, number] | null = null;
  let dragLast: [number, number] | null = null;

  const localXY = (ev: MouseEvent): [number, number] => {
    const rect = surface.getBoundingClientRect();
    return [ev.clientX - rect.left, ev.clientY - rect.top];
  };

  surface.addEventListener("mousedown", (ev) => {
    dragStart = localXY(ev as MouseEvent);
    dragLast = dragStart;
  });

  surface.addEventListener("mousemove", (ev) => {
    if (!dragStart || !dragLast) return;
    const cur = localXY(ev as MouseEvent);
    if (drawMode) {
      const x0 = Math.min(dragStart[0], cur[0]);
      const y0 = Math.min(dragStart[1], cur[1]);
      rubber.style.display = "block";
      rubber.style.left = `${x0}px`;
      rubber.style.top = `${y0}px`;
      rubber.style.width = `${Math.abs(cur[0] - dragStart[0])}px`;
      rubber.style.height = `${Math.abs(cur[1] - dragStart[1])}px`;
    } else {
      session.panBy(cur[0] - dragLast[0], cur[1] - dragLast[1]);
      renderBase();
      renderOverlay();
    }
    dragLast = cur;
  });

  surface.addEventListener("mouseup", (ev) => {
    if (!dragStart) return;
    const end = localXY(ev as MouseEvent);
    const start = dragStart;
    dragStart = null;
    dragLast = null;
    rubber.style.display = "none";
    if (!drawMode) return;
    if (Math.abs(end[0] - start[0]) < MIN_DRAG_PX || Math.abs(end[1] - start[1]) < MIN_DRAG_PX) {
      return;
    }
    const [wx0, wy0] = screenToWorld(session.viewport, start[0], start[1]);
    const [wx1, wy1] = screenToWorld(session.viewport, end[0], end[1]);
    const [lonA, latA] = worldToLonLat(wx0, wy0);
    const [lonB, latB] = worldToLonLat(wx1, wy1);
    handlers.onPredict([
      Math.min(lonA, lonB),
      Math.min(latA, latB),
      Math.max(lonA, lonB),
      Math.max(latA, latB),
    ]);
  });

  // ---- job list -------------------------------------------------------
  const jobsPanel = el("aside", { class: "jobs-panel" }, el("h3", { text: "Jobs" }));
  const list = el("ul", { class: "job-list" });
  for (const job of jobs) {
    list.appendChild(
      el(
        "li",
        { class: "job-row", "data-job-id": job.job_id },
        `${job.kind} ${job.job_id} `,
        el("span", { class: `job-status status-${job.status.toLowerCase()}`, text: job.status }),
      ),
    );
  }
  jobsPanel.appendChild(list);
  container.appendChild(jobsPanel);
}
