// Documents as the HTTP API returns them. Field names mirror the wire
// format exactly; nothing here is renamed or derived.

export interface Project {
  project_id: string;
  name: string;
  description: string;
  created_at: string;
  experiment_ids?: string[];
}

export interface Hyperparams {
  epochs?: number;
  learning_rate?: number;
  batch_size?: number;
  init_seed?: number;
  [key: string]: number | undefined;
}

export interface Experiment {
  experiment_id: string;
  project_id: string;
  label_set_id: string;
  profile_ids: string[];
  date_range: Record<string, [string, string]> | null;
  architecture_id: string;
  hyperparams: Hyperparams;
  state: string;
  parent_id: string | null;
  tags: string[];
  notes: string;
  checkpoints: string[];
  prediction_job_ids: string[];
  last_metrics: MetricsRecord | null;
  created_at: string;
  updated_at: string;
}

export interface Job {
  job_id: string;
  kind: string;
  experiment_id: string;
  status: string;
  args: Record<string, unknown>;
  result: Record<string, unknown> | null;
  error: string | null;
  created_at: string;
  started_at: string | null;
  finished_at: string | null;
}

export interface TaskMetrics {
  accuracy: number;
  precision: number;
  recall: number;
  f1: number;
  iou: Array<number | null>;
  fiou: number;
  mean_loss: number;
  n_valid: number;
  [key: string]: unknown;
}

export interface MetricsRecord {
  epoch: number;
  split: string;
  tasks: Record<string, TaskMetrics>;
  total_loss: number | null;
}

export interface ProfileInfo {
  profile_id: string;
  name: string;
  description: string;
  channel_names: string[];
  channel_count: number;
  temporal: boolean;
  dates: string[];
}

export interface ArchitectureInfo {
  architecture_id: string;
  description: string;
}

export interface LabelSetInfo {
  label_set_id: string;
  tasks: Array<{ task_name: string; class_count: number }>;
  tile_count: number;
}

export interface Round {
  round_id: string;
  source_experiment_id: string;
  prediction_job_id: string;
  k: number;
  requested_k: number;
  tiles: Array<[number, number]>;
  uncertainties: number[];
  label_task_id: string;
  label_set_id: string;
  clone_experiment_id: string | null;
  warning: string | null;
  created_at: string;
}
