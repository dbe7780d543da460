import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { App, parseHash, POLL_MS } from "../src/app.js";
import { worldToLonLat } from "../src/session.js";
import type { Experiment, Job, Round } from "../src/types.js";
import {
  LABEL_SETS,
  mkExperiment,
  mkJob,
  mkProject,
  mkRound,
  MockServer,
  resetCounter,
} from "./mock.js";

async function flush(times = 4): Promise<void> {
  for (let i = 0; i < times; i++) {
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
}

describe("hash routing", () => {
  it("maps hashes to pages", () => {
    expect(parseHash("")).toEqual({ page: "dashboard" });
    expect(parseHash("#/")).toEqual({ page: "dashboard" });
    expect(parseHash("#/new-experiment")).toEqual({ page: "builder" });
    expect(parseHash("#/experiments/eX")).toEqual({ page: "experiment", id: "eX" });
    expect(parseHash("#/rounds/r7")).toEqual({ page: "round", id: "r7" });
    expect(parseHash("#/garbage/x")).toEqual({ page: "dashboard" });
  });

  it("never polls faster than every two seconds", () => {
    expect(POLL_MS).toBeGreaterThanOrEqual(2000);
  });
});

describe("app against a mocked server", () => {
  let server: MockServer;
  let root: HTMLElement;

  beforeEach(() => {
    resetCounter();
    server = new MockServer();
    root = document.createElement("div");
    document.body.appendChild(root);
    location.hash = "";
  });

  const newApp = (): App => new App(new ApiClient("", server.fetch), root);

  it("clone from the dashboard posts, re-fetches, and shows the new DRAFT card", async () => {
    const project = mkProject({ project_id: "p1", name: "roads" });
    const experiments: Experiment[] = [
      mkExperiment({ experiment_id: "e1", project_id: "p1", state: "TRAINED" }),
    ];
    server.on("GET", /^\/api\/projects$/, () => [project]);
    server.on("GET", /^\/api\/projects\/p1$/, () => ({ ...project, experiments }));
    server.on("GET", /^\/api\/experiments\/e1\/metrics$/, () => "");
    server.on("POST", /^\/api\/experiments\/e1\/clone$/, () => {
      const clone = mkExperiment({
        experiment_id: "e1_clone",
        project_id: "p1",
        state: "DRAFT",
        parent_id: "e1",
      });
      experiments.push(clone);
      return { status: 201, body: clone };
    });

    const app = newApp();
    location.hash = "#/";
    await app.refresh();
    expect(root.querySelectorAll(".exp-card")).toHaveLength(1);
    expect(root.querySelector(".exp-card .badge")!.textContent).toBe("TRAINED");

    (root.querySelector('[data-experiment-id="e1"] .clone-btn') as HTMLElement).click();
    await flush(6);

    expect(server.callsTo("POST", "/api/experiments/e1/clone")).toHaveLength(1);
    const cloneCard = root.querySelector('[data-experiment-id="e1_clone"]')!;
    expect(cloneCard).not.toBeNull();
    expect(cloneCard.querySelector(".badge")!.textContent).toBe("DRAFT");
    expect(cloneCard.querySelector(".lineage")!.textContent).toContain("e1");
  });

  it("drives the whole review flow: cards, annotate, complete, clone link", async () => {
    const round: Round = mkRound({
      round_id: "r1",
      source_experiment_id: "e1",
      label_task_id: "t1",
      k: 3,
    });
    const source = mkExperiment({
      experiment_id: "e1",
      state: "TRAINED",
      label_set_id: "buildings",
    });
    let taskStatus = "open";
    server.on("GET", /^\/api\/active-learning\/r1$/, () => round);
    server.on("GET", /^\/api\/experiments\/e1$/, () => source);
    server.on("GET", /^\/api\/catalog\/label-sets$/, () => LABEL_SETS);
    server.on("POST", /^\/api\/labels\/tasks\/t1\/annotations$/, (_m, body) => {
      const payload = body as { wkt: string; task_name: string };
      if (!payload.wkt.trim()) {
        return { status: 400, body: { error_code: "validation", message: "empty wkt" } };
      }
      taskStatus = "completed";
      return { task_id: "t1", label_set_id: round.label_set_id, status: taskStatus };
    });
    server.on("POST", /^\/api\/active-learning\/r1\/complete$/, () => {
      if (taskStatus !== "completed") {
        return {
          status: 409,
          body: { error_code: "state", message: "labeling task 't1' is still open" },
        };
      }
      const clone = mkExperiment({ experiment_id: "e1_al", parent_id: "e1", state: "DRAFT" });
      round.clone_experiment_id = clone.experiment_id;
      return clone;
    });

    const app = newApp();
    location.hash = "#/rounds/r1";
    await app.refresh();

    const cards = [...root.querySelectorAll(".tile-card")];
    expect(cards).toHaveLength(3);
    expect(cards.map((c) => c.getAttribute("data-tile"))).toEqual(
      round.tiles.map(([x, y]) => `${x},${y}`),
    );
    // context imagery comes from the round's prediction job
    expect(cards[0].querySelector(".context-tile")!.getAttribute("src")).toBe(
      `/api/predictions/j1/tiles/seg/1/16/${round.tiles[0][0]}/${round.tiles[0][1]}.png`,
    );

    // completing before annotating surfaces the server's state error
    (root.querySelector(".complete-round") as HTMLElement).click();
    await flush();
    expect(root.querySelector(".server-error")!.textContent).toMatch(/still open/);

    const inputs = [...root.querySelectorAll<HTMLTextAreaElement>(".wkt-input")];
    inputs[0].value = "POINT (8.0001 47.0001)";
    (root.querySelector(".submit-annotations") as HTMLElement).click();
    await flush();
    const annotateCalls = server.callsTo("POST", "/api/labels/tasks/t1/annotations");
    expect(annotateCalls).toHaveLength(1);
    expect(annotateCalls[0].body).toEqual({
      wkt: "POINT (8.0001 47.0001)",
      task_name: "seg",
    });

    (root.querySelector(".complete-round") as HTMLElement).click();
    await flush();
    expect(server.callsTo("POST", "/api/active-learning/r1/complete")).toHaveLength(2);
    const link = root.querySelector(".clone-link")!;
    expect(link.textContent).toBe("e1_al");
    expect(link.getAttribute("href")).toBe("#/experiments/e1_al");
  });

  it("bbox drag on the experiment map posts predict and the job shows up", async () => {
    const exp = mkExperiment({ experiment_id: "e1", state: "TRAINED", label_set_id: "buildings" });
    // a completed prediction over a 2x2-tile region; the app centers on it
    const [lonMin, latMax] = worldToLonLat(34000 * 256, 22000 * 256);
    const [lonMax, latMin] = worldToLonLat(34002 * 256, 22002 * 256);
    const jobs: Job[] = [
      mkJob({
        job_id: "jP",
        kind: "predict",
        status: "SUCCEEDED",
        args: { bbox: [lonMin, latMin, lonMax, latMax] },
      }),
    ];
    server.on("GET", /^\/api\/experiments\/e1$/, () => exp);
    server.on("GET", /^\/api\/experiments\/e1\/metrics$/, () => "");
    server.on("GET", /^\/api\/jobs$/, () => jobs);
    server.on("GET", /^\/api\/catalog\/label-sets$/, () => LABEL_SETS);
    server.on("GET", /^\/api\/active-learning$/, () => []);
    server.on("POST", /^\/api\/experiments\/e1\/predict$/, (_m, body) => {
      const args = body as { bbox: number[]; workers: number };
      const job = mkJob({
        job_id: "jNew",
        kind: "predict",
        status: "QUEUED",
        args: { bbox: args.bbox },
      });
      jobs.push(job);
      return { status: 202, body: job };
    });

    const app = newApp();
    location.hash = "#/experiments/e1";
    await app.refresh();

    // overlay tiles come from the succeeded predict job
    const tileSrc = root.querySelector(".heatmap-tile")!.getAttribute("src")!;
    expect(tileSrc).toMatch(/^\/api\/predictions\/jP\/tiles\/seg\/1\/16\//);

    (root.querySelector(".bbox-btn") as HTMLElement).click();
    const surface = root.querySelector(".map-surface")!;
    surface.dispatchEvent(new MouseEvent("mousedown", { clientX: 100, clientY: 100 }));
    surface.dispatchEvent(new MouseEvent("mousemove", { clientX: 220, clientY: 200 }));
    surface.dispatchEvent(new MouseEvent("mouseup", { clientX: 220, clientY: 200 }));
    await flush(6);

    const predictCalls = server.callsTo("POST", "/api/experiments/e1/predict");
    expect(predictCalls).toHaveLength(1);
    const payload = predictCalls[0].body as { bbox: number[]; workers: number };
    expect(payload.bbox).toHaveLength(4);
    expect(payload.bbox[0]).toBeLessThan(payload.bbox[2]);
    expect(payload.bbox[1]).toBeLessThan(payload.bbox[3]);
    expect(payload.workers).toBe(1);

    // the re-fetch after the action lists the queued job; nothing was
    // painted optimistically before the server responded
    const rows = [...root.querySelectorAll(".job-row")];
    expect(rows.map((r) => r.getAttribute("data-job-id"))).toContain("jNew");
  });

  it("shows the error banner when the API fails", async () => {
    server.on("GET", /^\/api\/projects$/, () => ({
      status: 500,
      body: { error_code: "internal", message: "boom" },
    }));
    const app = newApp();
    location.hash = "#/";
    await app.refresh();
    const banner = root.querySelector<HTMLElement>(".error-banner")!;
    expect(banner.style.display).not.toBe("none");
    expect(banner.textContent).toMatch(/boom/);
  });
});
