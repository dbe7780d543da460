// Project dashboard: one card per experiment with its lifecycle state,
// lineage, tags, and a small validation-loss sparkline. Every number
// shown comes straight from an API document.

import { clear, el, svgEl } from "../dom.js";
import type { Experiment, MetricsRecord, Project } from "../types.js";

export interface DashboardHandlers {
  onSelectProject: (projectId: string) => void;
  onCreateProject: (name: string) => void;
  onOpen: (experimentId: string) => void;
  onClone: (experimentId: string) => void;
  onNewExperiment: () => void;
}

/** Polyline of per-epoch validation loss; empty SVG when the history
 *  has fewer than two finite points. */
export function sparkline(history: MetricsRecord[], width = 120, height = 28): SVGElement {
  const svg = svgEl("svg", {
    class: "sparkline",
    width: String(width),
    height: String(height),
    viewBox: `0 0 ${width} ${height}`,
  });
  const pts: Array<[number, number]> = [];
  for (const rec of history) {
    if (rec.split !== "val") continue;
    const v = rec.total_loss;
    if (typeof v === "number" && Number.isFinite(v)) pts.push([rec.epoch, v]);
  }
  if (pts.length < 2) return svg;
  const xs = pts.map((p) => p[0]);
  const ys = pts.map((p) => p[1]);
  const xLo = Math.min(...xs);
  const xSpan = Math.max(...xs) - xLo || 1;
  const yLo = Math.min(...ys);
  const ySpan = Math.max(...ys) - yLo || 1;
  const coords = pts
    .map(([x, y]) => {
      const px = ((x - xLo) / xSpan) * (width - 4) + 2;
      const py = height - 2 - ((y - yLo) / ySpan) * (height - 4);
      return `${px.toFixed(1)},${py.toFixed(1)}`;
    })
    .join(" ");
  svg.appendChild(svgEl("polyline", { points: coords, fill: "none", "stroke-width": "1.5" }));
  return svg;
}

function stateBadge(state: string): HTMLElement {
  return el("span", { class: `badge state-${state.toLowerCase()}`, text: state });
}

function experimentCard(
  exp: Experiment,
  history: MetricsRecord[] | undefined,
  handlers: DashboardHandlers,
): HTMLElement {
  const card = el("article", { class: "exp-card", "data-experiment-id": exp.experiment_id });
  const head = el(
    "div",
    { class: "card-head" },
    el("a", {
      class: "exp-id",
      href: `#/experiments/${exp.experiment_id}`,
      text: exp.experiment_id,
    }),
    stateBadge(exp.state),
  );
  card.appendChild(head);

  const meta = el(
    "dl",
    { class: "card-meta" },
    el("dt", { text: "architecture" }),
    el("dd", { text: exp.architecture_id }),
    el("dt", { text: "label set" }),
    el("dd", { text: exp.label_set_id }),
    el("dt", { text: "profiles" }),
    el("dd", { text: exp.profile_ids.join(", ") }),
  );
  card.appendChild(meta);

  if (exp.parent_id) {
    card.appendChild(
      el(
        "div",
        { class: "lineage" },
        "cloned from ",
        el("a", { href: `#/experiments/${exp.parent_id}`, text: exp.parent_id }),
      ),
    );
  }

  if (exp.tags.length) {
    const tags = el("div", { class: "tags" });
    for (const t of exp.tags) tags.appendChild(el("span", { class: "tag", text: t }));
    card.appendChild(tags);
  }

  if (history && history.length) card.appendChild(sparkline(history));

  const actions = el(
    "div",
    { class: "card-actions" },
    el("button", {
      class: "open-btn",
      text: "Open",
      onclick: () => handlers.onOpen(exp.experiment_id),
    }),
    el("button", {
      class: "clone-btn",
      text: "Clone",
      onclick: () => handlers.onClone(exp.experiment_id),
    }),
  );
  card.appendChild(actions);
  return card;
}

export function renderDashboard(
  container: HTMLElement,
  projects: Project[],
  selected: Project | null,
  experiments: Experiment[],
  metricsById: Map<string, MetricsRecord[]>,
  handlers: DashboardHandlers,
): void {
  clear(container);

  const picker = el("div", { class: "project-picker" });
  const select = el("select", { class: "project-select" });
  select.appendChild(el("option", { value: "", text: "choose a project" }));
  for (const p of projects) {
    const opt = el("option", { value: p.project_id, text: p.name });
    if (selected && p.project_id === selected.project_id) opt.selected = true;
    select.appendChild(opt);
  }
  select.addEventListener("change", () => {
    if (select.value) handlers.onSelectProject(select.value);
  });
  picker.appendChild(select);

  const nameInput = el("input", {
    class: "new-project-name",
    placeholder: "new project name",
  }) as HTMLInputElement;
  picker.appendChild(nameInput);
  picker.appendChild(
    el("button", {
      class: "new-project-btn",
      text: "Create project",
      onclick: () => {
        if (nameInput.value.trim()) handlers.onCreateProject(nameInput.value.trim());
      },
    }),
  );
  container.appendChild(picker);

  if (!projects.length) {
    container.appendChild(
      el("div", { class: "empty-state", text: "No projects yet. Create one to get started." }),
    );
    return;
  }
  if (!selected) {
    container.appendChild(
      el("div", { class: "empty-state", text: "Choose a project to see its experiments." }),
    );
    return;
  }

  const bar = el(
    "div",
    { class: "dash-bar" },
    el("h2", { text: selected.name }),
    el("button", {
      class: "new-exp-btn",
      text: "New experiment",
      onclick: () => handlers.onNewExperiment(),
    }),
  );
  container.appendChild(bar);

  if (!experiments.length) {
    container.appendChild(
      el("div", { class: "empty-state", text: "No experiments in this project yet." }),
    );
    return;
  }

  const grid = el("div", { class: "exp-grid" });
  for (const exp of experiments) {
    grid.appendChild(experimentCard(exp, metricsById.get(exp.experiment_id), handlers));
  }
  container.appendChild(grid);
}
