"""Experiment lifecycle table and document helpers.

Documents are plain dicts (JSON all the way through); this module owns
the transition table and the factory/validation helpers for each kind.
"""

from __future__ import annotations

from datetime import datetime, timezone

from ..errors import StateError, ValidationError

DRAFT = "DRAFT"
DATA_PREP_RUNNING = "DATA_PREP_RUNNING"
DATA_READY = "DATA_READY"
TRAINING = "TRAINING"
TRAINED = "TRAINED"
FAILED = "FAILED"

STATES = (DRAFT, DATA_PREP_RUNNING, DATA_READY, TRAINING, TRAINED, FAILED)

TRANSITIONS = {
    (DRAFT, "start_dataprep"): DATA_PREP_RUNNING,
    (DATA_PREP_RUNNING, "dataprep_succeeded"): DATA_READY,
    (DATA_PREP_RUNNING, "dataprep_failed"): FAILED,
    (DATA_READY, "start_training"): TRAINING,
    (TRAINING, "training_succeeded"): TRAINED,
    (TRAINING, "training_failed"): FAILED,
    (TRAINED, "start_training"): TRAINING,
    (FAILED, "reset"): DRAFT,
}

EVENTS = tuple(sorted({event for _, event in TRANSITIONS}))

ARCHITECTURES = (
    {"architecture_id": "fcn_mini",
     "description": "3-level encoder-decoder, widths 16/32/64, no skips"},
    {"architecture_id": "unet_mini",
     "description": "3-level encoder-decoder, widths 16/32/64, additive skips"},
)

ARCHITECTURE_IDS = tuple(a["architecture_id"] for a in ARCHITECTURES)

CLONE_OVERRIDE_KEYS = ("label_set_id", "profile_ids", "date_range",
                       "architecture_id", "hyperparams", "tags", "notes")

JOB_KINDS = ("dataprep", "train", "automl", "predict")
RUNNING_STATUSES = ("QUEUED", "RUNNING")


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def apply_event(state: str, event: str) -> str:
    if event not in EVENTS:
        raise ValidationError(f"unknown event {event!r}")
    nxt = TRANSITIONS.get((state, event))
    if nxt is None:
        raise StateError(f"event {event!r} is not legal from state {state}")
    return nxt


def new_project(project_id: str, name: str, description: str) -> dict:
    if not name or not isinstance(name, str):
        raise ValidationError("project name must be a non-empty string")
    return {
        "project_id": project_id,
        "name": name,
        "description": description or "",
        "experiment_ids": [],
        "created_at": now_iso(),
    }


def new_experiment(experiment_id: str, project_id: str, config: dict) -> dict:
    if not isinstance(config, dict):
        raise ValidationError("experiment config must be an object")
    known = {"label_set_id", "profile_ids", "date_range", "architecture_id",
             "hyperparams", "tags", "notes", "val_fraction", "split_seed",
             "transient_dir"}
    unknown = set(config) - known
    if unknown:
        raise ValidationError(f"unknown experiment config keys: {sorted(unknown)}")
    label_set_id = config.get("label_set_id")
    profile_ids = config.get("profile_ids")
    architecture_id = config.get("architecture_id")
    if not label_set_id:
        raise ValidationError("experiment config needs label_set_id")
    if not profile_ids or not isinstance(profile_ids, list):
        raise ValidationError("experiment config needs a non-empty profile_ids list")
    if architecture_id not in ARCHITECTURE_IDS:
        raise ValidationError(
            f"unknown architecture {architecture_id!r}; "
            f"choose one of {list(ARCHITECTURE_IDS)}")
    date_range = config.get("date_range")
    if date_range is not None and not isinstance(date_range, dict):
        raise ValidationError("date_range must map profile_id to [start, end]")
    hp = config.get("hyperparams") or {}
    if not isinstance(hp, dict):
        raise ValidationError("hyperparams must be an object")
    tags = config.get("tags") or []
    if not isinstance(tags, list) or any(not isinstance(t, str) for t in tags):
        raise ValidationError("tags must be a list of strings")
    ts = now_iso()
    return {
        "experiment_id": experiment_id,
        "project_id": project_id,
        "label_set_id": label_set_id,
        "profile_ids": list(profile_ids),
        "date_range": date_range,
        "architecture_id": architecture_id,
        "hyperparams": dict(hp),
        "state": DRAFT,
        "parent_id": None,
        "tags": list(tags),
        "notes": str(config.get("notes") or ""),
        "val_fraction": float(config.get("val_fraction", 0.30)),
        "split_seed": int(config.get("split_seed", 0)),
        "transient_dir": config.get("transient_dir"),
        "data_dir": None,
        "checkpoints": [],
        "prediction_job_ids": [],
        "last_metrics": None,
        "created_at": ts,
        "updated_at": ts,
    }


def new_job(job_id: str, kind: str, experiment_id: str | None,
            args: dict, idempotency_key: str | None) -> dict:
    if kind not in JOB_KINDS:
        raise ValidationError(f"unknown job kind {kind!r}")
    return {
        "job_id": job_id,
        "kind": kind,
        "experiment_id": experiment_id,
        "status": "QUEUED",
        "args": args,
        "result": None,
        "error": None,
        "idempotency_key": idempotency_key,
        "created_at": now_iso(),
        "started_at": None,
        "finished_at": None,
    }


def new_round(round_id: str, source_experiment_id: str, prediction_job_id: str,
              requested_k: int, tiles: list, uncertainties: list,
              label_task_id: str, label_set_id: str,
              warning: str | None) -> dict:
    return {
        "round_id": round_id,
        "source_experiment_id": source_experiment_id,
        "prediction_job_id": prediction_job_id,
        "k": len(tiles),
        "requested_k": requested_k,
        "tiles": tiles,
        "uncertainties": uncertainties,
        "label_task_id": label_task_id,
        "label_set_id": label_set_id,
        "clone_experiment_id": None,
        "warning": warning,
        "created_at": now_iso(),
    }
