import { beforeEach, describe, expect, it, vi } from "vitest";

import { renderDashboard, sparkline } from "../src/views/dashboard.js";
import type { DashboardHandlers } from "../src/views/dashboard.js";
import { mkExperiment, mkMetricsRecord, mkProject, resetCounter } from "./mock.js";

function noopHandlers(): DashboardHandlers {
  return {
    onSelectProject: vi.fn(),
    onCreateProject: vi.fn(),
    onOpen: vi.fn(),
    onClone: vi.fn(),
    onNewExperiment: vi.fn(),
  };
}

describe("dashboard", () => {
  let root: HTMLElement;

  beforeEach(() => {
    resetCounter();
    root = document.createElement("div");
  });

  it("shows the empty state when the server has no projects", () => {
    renderDashboard(root, [], null, [], new Map(), noopHandlers());
    const empty = root.querySelector(".empty-state");
    expect(empty).not.toBeNull();
    expect(empty!.textContent).toMatch(/No projects yet/);
  });

  it("renders one badge per experiment with the exact state text", () => {
    const project = mkProject({ project_id: "p1" });
    const states = ["DRAFT", "DATA_PREP_RUNNING", "DATA_READY", "TRAINING", "TRAINED", "FAILED"];
    const exps = states.map((state, i) =>
      mkExperiment({ experiment_id: `e${i}`, state, project_id: "p1" }),
    );
    renderDashboard(root, [project], project, exps, new Map(), noopHandlers());
    const badges = [...root.querySelectorAll(".exp-card .badge")];
    expect(badges.map((b) => b.textContent)).toEqual(states);
    for (let i = 0; i < states.length; i++) {
      expect(badges[i].classList.contains(`state-${states[i].toLowerCase()}`)).toBe(true);
    }
  });

  it("marks a clone with a lineage reference to its parent", () => {
    const project = mkProject({ project_id: "p1" });
    const parent = mkExperiment({ experiment_id: "parent1", project_id: "p1" });
    const clone = mkExperiment({
      experiment_id: "clone1",
      project_id: "p1",
      parent_id: "parent1",
      state: "DRAFT",
    });
    renderDashboard(root, [project], project, [parent, clone], new Map(), noopHandlers());
    const card = root.querySelector('[data-experiment-id="clone1"]')!;
    const lineage = card.querySelector(".lineage")!;
    expect(lineage.textContent).toContain("parent1");
    expect(lineage.querySelector("a")!.getAttribute("href")).toBe("#/experiments/parent1");
    expect(root.querySelector('[data-experiment-id="parent1"] .lineage')).toBeNull();
  });

  it("wires the clone button to the clone handler", () => {
    const project = mkProject({ project_id: "p1" });
    const exp = mkExperiment({ experiment_id: "eA", project_id: "p1" });
    const handlers = noopHandlers();
    renderDashboard(root, [project], project, [exp], new Map(), handlers);
    (root.querySelector('[data-experiment-id="eA"] .clone-btn') as HTMLElement).click();
    expect(handlers.onClone).toHaveBeenCalledWith("eA");
  });

  it("draws a sparkline for an experiment with history", () => {
    const project = mkProject({ project_id: "p1" });
    const exp = mkExperiment({ experiment_id: "eT", project_id: "p1", state: "TRAINING" });
    const history = [0, 1, 2].flatMap((epoch) => [
      mkMetricsRecord(epoch, "train"),
      mkMetricsRecord(epoch, "val"),
    ]);
    renderDashboard(
      root,
      [project],
      project,
      [exp],
      new Map([["eT", history]]),
      noopHandlers(),
    );
    const line = root.querySelector('[data-experiment-id="eT"] .sparkline polyline');
    expect(line).not.toBeNull();
    expect(line!.getAttribute("points")!.split(" ")).toHaveLength(3);
  });

  it("keeps the sparkline empty for short or non-finite histories", () => {
    const svgShort = sparkline([mkMetricsRecord(0, "val")]);
    expect(svgShort.querySelector("polyline")).toBeNull();
    const bad = [mkMetricsRecord(0, "val"), mkMetricsRecord(1, "val")];
    bad[0].total_loss = Number.NaN;
    const svgBad = sparkline(bad);
    expect(svgBad.querySelector("polyline")).toBeNull();
  });
});
