// Composition root: hash routing, periodic refresh, and the glue
// between API calls and views. State-changing actions always re-fetch
// before re-rendering; nothing on screen is a client-side guess.

import { ApiClient, ApiError } from "./api.js";
import { clear, el } from "./dom.js";
import { lonLatToWorld, UiSession } from "./session.js";
import { renderBuilder, showBuilderError } from "./views/builder.js";
import { renderDashboard } from "./views/dashboard.js";
import { renderMetrics } from "./views/metrics.js";
import { renderMap } from "./views/map.js";
import type { TaskSpec } from "./views/map.js";
import { renderReview } from "./views/review.js";
import type { Experiment, MetricsRecord, Project } from "./types.js";

export const POLL_MS = 2500; // state refresh cadence; never below 2 s

interface Route {
  page: "dashboard" | "builder" | "experiment" | "round";
  id?: string;
}

export function parseHash(hash: string): Route {
  const parts = hash.replace(/^#\/?/, "").split("/").filter(Boolean);
  if (parts[0] === "new-experiment") return { page: "builder" };
  if (parts[0] === "experiments" && parts[1]) return { page: "experiment", id: parts[1] };
  if (parts[0] === "rounds" && parts[1]) return { page: "round", id: parts[1] };
  return { page: "dashboard" };
}

export class App {
  private readonly api: ApiClient;
  private readonly banner: HTMLElement;
  private readonly main: HTMLElement;
  private readonly session = new UiSession();
  private timer: ReturnType<typeof setInterval> | null = null;
  private loading = false;

  constructor(api: ApiClient, root: HTMLElement) {
    this.api = api;
    this.banner = el("div", { class: "error-banner", style: "display:none" });
    this.main = el("main", { class: "app-main" });
    const header = el(
      "header",
      { class: "app-header" },
      el("a", { href: "#/", class: "app-title", text: "trinity-lite" }),
    );
    clear(root);
    root.append(header, this.banner, this.main);
  }

  start(): void {
    window.addEventListener("hashchange", () => void this.refresh());
    this.timer = setInterval(() => {
      const page = parseHash(location.hash).page;
      // forms keep user input; only live pages poll
      if (page === "dashboard" || page === "experiment") void this.refresh();
    }, POLL_MS);
    void this.refresh();
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
  }

  private showError(err: unknown): void {
    const msg = err instanceof ApiError ? err.message : String(err);
    this.banner.textContent = msg;
    this.banner.style.display = "block";
  }

  private clearError(): void {
    this.banner.style.display = "none";
    this.banner.textContent = "";
  }

  async refresh(): Promise<void> {
    if (this.loading) return;
    this.loading = true;
    try {
      const route = parseHash(location.hash);
      if (route.page === "dashboard") await this.showDashboard();
      else if (route.page === "builder") await this.showBuilder();
      else if (route.page === "experiment") await this.showExperiment(route.id!);
      else await this.showRound(route.id!);
      this.clearError();
    } catch (err) {
      this.showError(err);
    } finally {
      this.loading = false;
    }
  }

  // ---- dashboard ------------------------------------------------------

  private async showDashboard(): Promise<void> {
    const projects = await this.api.listProjects();
    let selected: Project | null = null;
    let experiments: Experiment[] = [];
    const metricsById = new Map<string, MetricsRecord[]>();
    if (this.session.projectId === null && projects.length === 1) {
      this.session.projectId = projects[0].project_id;
    }
    if (this.session.projectId !== null) {
      const detail = await this.api.getProject(this.session.projectId);
      selected = detail;
      experiments = detail.experiments;
      for (const exp of experiments) {
        if (exp.state === "TRAINING" || exp.state === "TRAINED") {
          try {
            metricsById.set(exp.experiment_id, await this.api.getMetrics(exp.experiment_id));
          } catch {
            // sparkline is optional; the card renders without it
          }
        }
      }
    }
    renderDashboard(this.main, projects, selected, experiments, metricsById, {
      onSelectProject: (pid) => {
        this.session.projectId = pid;
        void this.refresh();
      },
      onCreateProject: (name) => {
        void this.api
          .createProject(name)
          .then((p) => {
            this.session.projectId = p.project_id;
            return this.refresh();
          })
          .catch((err) => this.showError(err));
      },
      onOpen: (eid) => {
        location.hash = `#/experiments/${eid}`;
      },
      onClone: (eid) => {
        void this.api
          .cloneExperiment(eid)
          .then(() => this.refresh())
          .catch((err) => this.showError(err));
      },
      onNewExperiment: () => {
        location.hash = "#/new-experiment";
      },
    });
  }

  // ---- builder --------------------------------------------------------

  private async showBuilder(): Promise<void> {
    if (this.session.projectId === null) {
      location.hash = "#/";
      return;
    }
    const pid = this.session.projectId;
    const [profiles, architectures, labelSets] = await Promise.all([
      this.api.listProfiles(),
      this.api.listArchitectures(),
      this.api.listLabelSets(),
    ]);
    renderBuilder(this.main, profiles, architectures, labelSets, {
      onSubmit: ({ body, runDataprep }) => {
        void (async () => {
          try {
            const exp = await this.api.createExperiment(pid, body);
            if (runDataprep) await this.api.startDataprep(exp.experiment_id);
            location.hash = "#/";
          } catch (err) {
            showBuilderError(this.main, err instanceof Error ? err.message : String(err));
          }
        })();
      },
      onCancel: () => {
        location.hash = "#/";
      },
    });
  }

  // ---- experiment detail ----------------------------------------------

  private async showExperiment(eid: string): Promise<void> {
    const [exp, history, jobs, labelSets] = await Promise.all([
      this.api.getExperiment(eid),
      this.api.getMetrics(eid).catch(() => [] as MetricsRecord[]),
      this.api.listJobs(eid),
      this.api.listLabelSets(),
    ]);
    this.session.experimentId = eid;

    clear(this.main);
    const head = el(
      "div",
      { class: "exp-head" },
      el("h2", { text: exp.experiment_id }),
      el("span", { class: `badge state-${exp.state.toLowerCase()}`, text: exp.state }),
    );
    if (exp.parent_id) {
      head.appendChild(
        el(
          "span",
          { class: "lineage" },
          " cloned from ",
          el("a", { href: `#/experiments/${exp.parent_id}`, text: exp.parent_id }),
        ),
      );
    }
    this.main.appendChild(head);

    const act = (label: string, cls: string, fn: () => Promise<unknown>): HTMLElement =>
      el("button", {
        class: cls,
        text: label,
        onclick: () => {
          void fn()
            .then(() => this.refresh())
            .catch((err) => this.showError(err));
        },
      });
    const actions = el("div", { class: "exp-actions" });
    if (exp.state === "DRAFT") {
      actions.appendChild(act("Start data prep", "dataprep-btn", () => this.api.startDataprep(eid)));
    }
    if (exp.state === "DATA_READY" || exp.state === "TRAINED") {
      actions.appendChild(act("Start training", "train-btn", () => this.api.startTrain(eid)));
    }
    if (exp.state === "FAILED") {
      actions.appendChild(act("Reset", "reset-btn", () => this.api.resetExperiment(eid)));
    }
    actions.appendChild(act("Clone", "clone-btn", () => this.api.cloneExperiment(eid)));
    this.main.appendChild(actions);

    // tuning form; ranges go straight into the search job payload
    if (exp.state === "DATA_READY" || exp.state === "TRAINED") {
      const lo = el("input", { type: "number", step: "any", class: "tune-lo", value: "0.0001" });
      const hi = el("input", { type: "number", step: "any", class: "tune-hi", value: "0.01" });
      const trials = el("input", { type: "number", class: "tune-trials", value: "4" });
      this.main.appendChild(
        el(
          "div",
          { class: "tune-form" },
          "learning-rate range ", lo, " to ", hi, " trials ", trials,
          act("Tune", "tune-btn", () => {
            if (Number(lo.value) > Number(hi.value)) {
              return Promise.reject(new Error("tuning range: low exceeds high"));
            }
            return this.api.startAutoml(
              eid,
              { learning_rate: [Number(lo.value), Number(hi.value)] },
              Number(trials.value),
            );
          }),
        ),
      );
    }

    const metricsPane = el("section", { class: "metrics-pane" });
    renderMetrics(metricsPane, eid, history);
    this.main.appendChild(metricsPane);

    const ls = labelSets.find((s) => s.label_set_id === exp.label_set_id);
    const tasks: TaskSpec[] = ls ? ls.tasks : [];
    const predictJobs = jobs.filter((j) => j.kind === "predict" && j.status === "SUCCEEDED");
    if (this.session.overlay.jobId === null && predictJobs.length) {
      const job = predictJobs[predictJobs.length - 1];
      this.session.overlay.jobId = job.job_id;
      // first sight of a prediction: land the viewport on its region
      const bbox = (job.args as { bbox?: unknown }).bbox;
      if (Array.isArray(bbox) && bbox.length === 4) {
        const [x0, y0] = lonLatToWorld(Number(bbox[0]), Number(bbox[3]));
        const [x1, y1] = lonLatToWorld(Number(bbox[2]), Number(bbox[1]));
        this.session.viewport = { centerX: (x0 + x1) / 2, centerY: (y0 + y1) / 2, zoom: 16 };
      }
    }
    const mapPane = el("section", { class: "map-pane" });
    renderMap(mapPane, this.session, tasks, jobs, {
      tileUrl: (task, classIndex, x, y) =>
        this.session.overlay.jobId
          ? this.api.tileUrl(this.session.overlay.jobId, task, classIndex, x, y)
          : "",
      onPredict: (bbox) => {
        void this.api
          .startPredict(eid, bbox)
          .then(() => this.refresh())
          .catch((err) => this.showError(err));
      },
    });
    this.main.appendChild(mapPane);

    // label requests sourced from this experiment
    const rounds = (await this.api.listRounds()).filter(
      (r) => r.source_experiment_id === eid,
    );
    const alPane = el("section", { class: "al-pane" }, el("h3", { text: "Label requests" }));
    const ul = el("ul", { class: "round-list" });
    for (const r of rounds) {
      ul.appendChild(
        el(
          "li",
          { "data-round-id": r.round_id },
          el("a", { href: `#/rounds/${r.round_id}`, text: r.round_id }),
          ` (${r.k} tiles)`,
        ),
      );
    }
    alPane.appendChild(ul);
    if (predictJobs.length) {
      const kInput = el("input", { type: "number", class: "k-input", value: "5", min: "1" });
      const jobSelect = el("select", { class: "predict-job-select" });
      for (const j of predictJobs) {
        jobSelect.appendChild(el("option", { value: j.job_id, text: j.job_id }));
      }
      alPane.appendChild(
        el(
          "div",
          { class: "round-form" },
          jobSelect, " k ", kInput,
          act("Request labels", "create-round-btn", async () => {
            const round = await this.api.createRound(jobSelect.value, Number(kInput.value));
            location.hash = `#/rounds/${round.round_id}`;
          }),
        ),
      );
    }
    this.main.appendChild(alPane);
  }

  // ---- active-learning review -----------------------------------------

  private async showRound(roundId: string): Promise<void> {
    const round = await this.api.getRound(roundId);
    const source = await this.api.getExperiment(round.source_experiment_id);
    const labelSets = await this.api.listLabelSets();
    const ls = labelSets.find((s) => s.label_set_id === source.label_set_id);
    const taskName = ls && ls.tasks.length ? ls.tasks[0].task_name : "task";
    renderReview(this.main, round, taskName, {
      tileUrl: (task, classIndex, x, y) =>
        this.api.tileUrl(round.prediction_job_id, task, classIndex, x, y),
      onAnnotate: (wkt) => this.api.annotate(round.label_task_id, wkt, taskName),
      onComplete: () => this.api.completeRound(round.round_id),
    });
  }
}

export function startApp(api: ApiClient, root: HTMLElement): App {
  const app = new App(api, root);
  app.start();
  return app;
}
