// Thin typed wrapper over the backend HTTP API. Every method maps to
// exactly one route; no client-side caching, no retries, no invented
// endpoints. The fetch implementation is injectable so tests can swap
// in a mock without touching globals.

import type {
  ArchitectureInfo,
  Experiment,
  Job,
  LabelSetInfo,
  MetricsRecord,
  ProfileInfo,
  Project,
  Round,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

/** Bare ndjson numbers may be NaN/Infinity tokens, which JSON.parse
 *  rejects. Replace them with null before parsing so a bad epoch line
 *  degrades to a gap instead of killing the whole chart. Tokens inside
 *  string literals are left alone. */
export function sanitizeNdjsonLine(line: string): string {
  let out = "";
  let inString = false;
  let i = 0;
  while (i < line.length) {
    const ch = line[i];
    if (inString) {
      out += ch;
      if (ch === "\\") {
        out += line[i + 1] ?? "";
        i += 2;
        continue;
      }
      if (ch === '"') inString = false;
      i += 1;
      continue;
    }
    if (ch === '"') {
      inString = true;
      out += ch;
      i += 1;
      continue;
    }
    const rest = line.slice(i);
    const m = rest.match(/^-?(NaN|Infinity)/);
    if (m) {
      out += "null";
      i += m[0].length;
      continue;
    }
    out += ch;
    i += 1;
  }
  return out;
}

export function parseMetricsNdjson(text: string): MetricsRecord[] {
  const records: MetricsRecord[] = [];
  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (!line) continue;
    records.push(JSON.parse(sanitizeNdjsonLine(line)) as MetricsRecord);
  }
  return records;
}

export interface ExperimentCreate {
  label_set_id: string;
  profile_ids: string[];
  architecture_id: string;
  hyperparams?: Record<string, number>;
  date_range?: Record<string, [string, string]> | null;
  notes?: string;
  val_fraction?: number;
  split_seed?: number;
}

export class ApiClient {
  private readonly base: string;
  private readonly doFetch: FetchLike;
  private readonly token: string | null;

  constructor(base = "", fetchImpl?: FetchLike, token: string | null = null) {
    this.base = base.replace(/\/$/, "");
    this.doFetch = fetchImpl ?? ((url, init) => fetch(url, init));
    this.token = token;
  }

  private headers(json: boolean): Record<string, string> {
    const h: Record<string, string> = {};
    if (json) h["content-type"] = "application/json";
    if (this.token !== null) h["x-trinity-token"] = this.token;
    return h;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: this.headers(body !== undefined) };
    if (body !== undefined) init.body = JSON.stringify(body);
    const resp = await this.doFetch(this.base + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const payload = await resp.json();
        if (payload && typeof payload.message === "string") detail = payload.message;
        else if (payload && typeof payload.detail === "string") detail = payload.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    if (resp.status === 204) return undefined as T;
    return (await resp.json()) as T;
  }

  private async requestText(path: string): Promise<string> {
    const resp = await this.doFetch(this.base + path, { headers: this.headers(false) });
    if (!resp.ok) throw new ApiError(resp.status, resp.statusText);
    return await resp.text();
  }

  // ---- projects -------------------------------------------------------

  listProjects(): Promise<Project[]> {
    return this.request("GET", "/api/projects");
  }

  createProject(name: string, description = ""): Promise<Project> {
    return this.request("POST", "/api/projects", { name, description });
  }

  getProject(projectId: string): Promise<Project & { experiments: Experiment[] }> {
    return this.request("GET", `/api/projects/${projectId}`);
  }

  // ---- experiments ----------------------------------------------------

  createExperiment(projectId: string, body: ExperimentCreate): Promise<Experiment> {
    return this.request("POST", `/api/projects/${projectId}/experiments`, body);
  }

  getExperiment(experimentId: string): Promise<Experiment> {
    return this.request("GET", `/api/experiments/${experimentId}`);
  }

  cloneExperiment(
    experimentId: string,
    overrides?: Record<string, unknown>,
  ): Promise<Experiment> {
    const body = overrides === undefined ? {} : { overrides };
    return this.request("POST", `/api/experiments/${experimentId}/clone`, body);
  }

  updateExperiment(experimentId: string, patch: Record<string, unknown>): Promise<Experiment> {
    return this.request("PATCH", `/api/experiments/${experimentId}`, patch);
  }

  resetExperiment(experimentId: string): Promise<Experiment> {
    return this.request("POST", `/api/experiments/${experimentId}/reset`, {});
  }

  // ---- jobs -----------------------------------------------------------

  startDataprep(experimentId: string): Promise<Job> {
    return this.request("POST", `/api/experiments/${experimentId}/dataprep`, {});
  }

  startTrain(experimentId: string): Promise<Job> {
    return this.request("POST", `/api/experiments/${experimentId}/train`, {});
  }

  startAutoml(
    experimentId: string,
    ranges: Record<string, [number, number]>,
    nTrials = 4,
  ): Promise<Job> {
    return this.request("POST", `/api/experiments/${experimentId}/automl`, {
      ranges,
      n_trials: nTrials,
    });
  }

  startPredict(
    experimentId: string,
    bbox: [number, number, number, number],
    workers = 1,
  ): Promise<Job> {
    return this.request("POST", `/api/experiments/${experimentId}/predict`, { bbox, workers });
  }

  getJob(jobId: string): Promise<Job> {
    return this.request("GET", `/api/jobs/${jobId}`);
  }

  listJobs(experimentId: string): Promise<Job[]> {
    return this.request("GET", `/api/jobs?experiment_id=${encodeURIComponent(experimentId)}`);
  }

  // ---- metrics --------------------------------------------------------

  async getMetrics(experimentId: string): Promise<MetricsRecord[]> {
    const text = await this.requestText(`/api/experiments/${experimentId}/metrics`);
    return parseMetricsNdjson(text);
  }

  // ---- catalog --------------------------------------------------------

  listProfiles(): Promise<ProfileInfo[]> {
    return this.request("GET", "/api/catalog/profiles");
  }

  listArchitectures(): Promise<ArchitectureInfo[]> {
    return this.request("GET", "/api/catalog/architectures");
  }

  listLabelSets(): Promise<LabelSetInfo[]> {
    return this.request("GET", "/api/catalog/label-sets");
  }

  // ---- active learning ------------------------------------------------

  createRound(jobId: string, k: number): Promise<Round> {
    return this.request("POST", `/api/predictions/${jobId}/active-learning`, { k });
  }

  getRound(roundId: string): Promise<Round> {
    return this.request("GET", `/api/active-learning/${roundId}`);
  }

  listRounds(): Promise<Round[]> {
    return this.request("GET", "/api/active-learning");
  }

  annotate(
    taskId: string,
    wkt: string,
    taskName: string,
  ): Promise<{ task_id: string; label_set_id: string; status: string }> {
    return this.request("POST", `/api/labels/tasks/${taskId}/annotations`, {
      wkt,
      task_name: taskName,
    });
  }

  /** Server responds with the clone experiment created for the round. */
  completeRound(roundId: string): Promise<Experiment> {
    return this.request("POST", `/api/active-learning/${roundId}/complete`, {});
  }

  // ---- tiles ----------------------------------------------------------

  tileUrl(jobId: string, task: string, classIndex: number, x: number, y: number): string {
    return `${this.base}/api/predictions/${jobId}/tiles/${task}/${classIndex}/16/${x}/${y}.png`;
  }
}
