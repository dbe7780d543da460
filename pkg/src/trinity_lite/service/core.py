"""Single-process platform service: projects, experiments, jobs, rounds.

All metadata mutations run under one lock; long jobs execute on a bounded
thread pool and report back through the same lock. Construction scans for
jobs left QUEUED/RUNNING by a crash and fails them (and their experiments)
before any new work is accepted.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..dataprep import DatasetSpec, build_dataset, load_dataset
from ..errors import ConflictError, NotFoundError, StateError, ValidationError
from ..geo import BBox, Geometry, TileKey, parse_wkt, serialize_wkt
from ..inference import (
    heatmap_path,
    predict_region,
    read_heatmap,
    render_heatmap_png,
    viz_path,
)
from ..kernel import Hyperparams, ModelSpec, automl_search, load_checkpoint, train
from ..labels import LabelManager, TaskSpec, geometry_tiles, rasterize
from ..postprocess import (
    cluster_features,
    features_to_geojson,
    map_match,
    parse_road_network,
    predicate_filter,
    threshold_filter,
    weighted_dbscan,
)
from ..store import ChannelStore
from . import models
from .meta import MetaStore
from .models import (
    ARCHITECTURES,
    CLONE_OVERRIDE_KEYS,
    RUNNING_STATUSES,
    now_iso,
)


class ExperimentService:
    def __init__(self, root: str, max_workers: int = 2):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self.meta = MetaStore(os.path.join(root, "meta"))
        self.store = ChannelStore(os.path.join(root, "store"))
        self.labels = LabelManager(os.path.join(root, "labels"))
        self._futures = {}
        self._recover()
        self.executor = ThreadPoolExecutor(max_workers=max_workers)

    def shutdown(self, wait: bool = True) -> None:
        self.executor.shutdown(wait=wait)

    # -- paths --------------------------------------------------------------

    def _exp_dir(self, eid: str) -> str:
        return os.path.join(self.root, "experiments", eid)

    def _data_dir(self, eid: str) -> str:
        return os.path.join(self._exp_dir(eid), "data")

    def _ckpt_dir(self, eid: str) -> str:
        return os.path.join(self._exp_dir(eid), "ckpts")

    def _pred_dir(self, job_id: str) -> str:
        return os.path.join(self.root, "predictions", job_id)

    def _checkpoints_on_disk(self, eid: str) -> list:
        d = self._ckpt_dir(eid)
        if not os.path.isdir(d):
            return []
        return sorted(f for f in os.listdir(d) if f.endswith(".trnk"))

    def _manifest(self, eid: str) -> dict:
        path = os.path.join(self._data_dir(eid), "manifest.json")
        if not os.path.exists(path):
            raise StateError(f"experiment {eid!r} has no prepared dataset")
        with open(path, encoding="utf-8") as f:
            return json.load(f)

    # -- crash recovery -----------------------------------------------------

    def _recover(self) -> None:
        with self.meta.lock:
            for job in self.meta.list_docs("jobs"):
                if job["status"] in RUNNING_STATUSES:
                    job["status"] = "FAILED"
                    job["error"] = "interrupted by service restart"
                    job["finished_at"] = now_iso()
                    self.meta.save("jobs", job["job_id"], job)
            for exp in self.meta.list_docs("experiments"):
                event = {models.DATA_PREP_RUNNING: "dataprep_failed",
                         models.TRAINING: "training_failed"}.get(exp["state"])
                if event:
                    self._transition_locked(exp["experiment_id"], event)

    # -- projects -----------------------------------------------------------

    def create_project(self, name: str, description: str = "") -> dict:
        with self.meta.lock:
            pid = self.meta.next_id("projects", "proj")
            doc = models.new_project(pid, name, description)
            self.meta.save("projects", pid, doc)
            return doc

    def get_project(self, project_id: str) -> dict:
        return self.meta.load("projects", project_id)

    def list_projects(self) -> list:
        return self.meta.list_docs("projects")

    # -- experiments --------------------------------------------------------

    def _check_references(self, doc: dict) -> None:
        self.labels.get_label_set(doc["label_set_id"])
        for pid in doc["profile_ids"]:
            self.store.get_profile(pid)
        hp = dict(doc["hyperparams"])
        hp.setdefault("epochs", 1)
        Hyperparams.from_json(hp)

    def create_experiment(self, project_id: str, config: dict) -> dict:
        with self.meta.lock:
            project = self.meta.load("projects", project_id)
            eid = self.meta.next_id("experiments", "exp")
            doc = models.new_experiment(eid, project_id, config)
            self._check_references(doc)
            self.meta.save("experiments", eid, doc)
            project["experiment_ids"].append(eid)
            self.meta.save("projects", project_id, project)
            return doc

    def get_experiment(self, eid: str) -> dict:
        return self.meta.load("experiments", eid)

    def list_experiments(self, project_id: str | None = None) -> list:
        docs = self.meta.list_docs("experiments")
        if project_id is None:
            return docs
        return [d for d in docs if d["project_id"] == project_id]

    def update_experiment(self, eid: str, patch: dict) -> dict:
        allowed = {"tags", "notes"}
        unknown = set(patch) - allowed
        if unknown:
            raise ValidationError(f"only tags and notes are patchable, got {sorted(unknown)}")
        with self.meta.lock:
            doc = self.meta.load("experiments", eid)
            if "tags" in patch:
                tags = patch["tags"]
                if not isinstance(tags, list) or any(not isinstance(t, str) for t in tags):
                    raise ValidationError("tags must be a list of strings")
                doc["tags"] = list(tags)
            if "notes" in patch:
                doc["notes"] = str(patch["notes"])
            doc["updated_at"] = now_iso()
            self.meta.save("experiments", eid, doc)
            return doc

    def clone_experiment(self, eid: str, overrides: dict | None = None) -> dict:
        overrides = overrides or {}
        unknown = set(overrides) - set(CLONE_OVERRIDE_KEYS)
        if unknown:
            raise ValidationError(f"invalid clone overrides: {sorted(unknown)}")
        with self.meta.lock:
            src = self.meta.load("experiments", eid)
            config = {k: src[k] for k in CLONE_OVERRIDE_KEYS}
            config.update({k: v for k, v in overrides.items()})
            config["val_fraction"] = src["val_fraction"]
            config["split_seed"] = src["split_seed"]
            config["transient_dir"] = src["transient_dir"]
            project_id = src["project_id"]
            project = self.meta.load("projects", project_id)
            new_id = self.meta.next_id("experiments", "exp")
            doc = models.new_experiment(new_id, project_id, config)
            doc["parent_id"] = eid
            self._check_references(doc)
            self.meta.save("experiments", new_id, doc)
            project["experiment_ids"].append(new_id)
            self.meta.save("projects", project_id, project)
            return doc

    def lineage(self, eid: str) -> list:
        """Ids from the given experiment up through its ancestors."""
        chain = []
        current: str | None = eid
        while current is not None:
            doc = self.meta.load("experiments", current)
            chain.append(current)
            current = doc["parent_id"]
        return chain

    def _transition_locked(self, eid: str, event: str) -> dict:
        doc = self.meta.load("experiments", eid)
        before = doc["state"]
        doc["state"] = models.apply_event(before, event)
        doc["updated_at"] = now_iso()
        self.meta.save("experiments", eid, doc)
        self.meta.audit({"ts": doc["updated_at"], "experiment_id": eid,
                         "from": before, "event": event, "to": doc["state"]})
        return doc

    def transition(self, eid: str, event: str) -> dict:
        with self.meta.lock:
            return self._transition_locked(eid, event)

    # -- catalogs -----------------------------------------------------------

    def list_profiles(self) -> list:
        return [m.to_json() for m in self.store.list_profiles()]

    def list_architectures(self) -> list:
        return [dict(a) for a in ARCHITECTURES]

    def list_label_sets(self) -> list:
        out = []
        for sid in self.labels.list_label_sets():
            ls = self.labels.get_label_set(sid)
            out.append({
                "label_set_id": sid,
                "tasks": [{"task_name": t.task_name, "class_count": t.class_count}
                          for t in ls.task_specs],
                "tile_count": len(ls.labeled_tiles()),
                "geometry_counts": {name: len(g) for name, g in ls.geometries.items()},
            })
        return out

    # -- labels -------------------------------------------------------------

    def upload_labels(self, label_set_id: str, tasks: dict,
                      region: list | None, files: dict) -> dict:
        if not label_set_id:
            raise ValidationError("label_set_id is required")
        if not tasks or not isinstance(tasks, dict):
            raise ValidationError("tasks must map task names to class counts")
        specs = []
        for name, count in tasks.items():
            if not isinstance(count, int) or not 2 <= count <= 255:
                raise ValidationError(
                    f"task {name!r}: class count must be an integer in [2, 255]")
            specs.append(TaskSpec(name, count))
        unknown = set(files) - set(tasks)
        if unknown:
            raise ValidationError(f"files for undeclared tasks: {sorted(unknown)}")
        bbox = None
        if region is not None:
            if len(region) != 4:
                raise ValidationError("region must be [min_lon, min_lat, max_lon, max_lat]")
            bbox = BBox(*[float(v) for v in region])
        with tempfile.TemporaryDirectory() as td:
            paths = {}
            for name, text in files.items():
                path = os.path.join(td, f"{name}.wkt")
                with open(path, "w", encoding="utf-8") as f:
                    f.write(text)
                paths[name] = path
            ls = self.labels.ingest_wkt_files(label_set_id, specs, bbox, paths)
        return {
            "label_set_id": ls.label_set_id,
            "tasks": [{"task_name": t.task_name, "class_count": t.class_count}
                      for t in ls.task_specs],
            "tile_count": len(ls.labeled_tiles()),
            "geometry_counts": {name: len(g) for name, g in ls.geometries.items()},
        }

    def list_label_tasks(self) -> list:
        return [t.to_json() for t in self.labels.list_tasks()]

    def add_annotations(self, task_id: str, wkt_text: str,
                        task_name: str | None = None) -> dict:
        if not wkt_text or not wkt_text.strip():
            raise ValidationError("annotation WKT must be non-empty")
        ls = self.labels.add_annotations(task_id, wkt_text, task_name)
        return {"task_id": task_id, "label_set_id": ls.label_set_id,
                "status": self.labels.get_task(task_id).status}

    # -- job plumbing -------------------------------------------------------

    def get_job(self, job_id: str) -> dict:
        return self.meta.load("jobs", job_id)

    def list_jobs(self, experiment_id: str | None = None) -> list:
        docs = self.meta.list_docs("jobs")
        if experiment_id is None:
            return docs
        return [d for d in docs if d["experiment_id"] == experiment_id]

    def wait_job(self, job_id: str, timeout: float | None = None) -> dict:
        fut = self._futures.get(job_id)
        if fut is not None:
            fut.result(timeout)
        return self.get_job(job_id)

    def _find_idempotent(self, kind, eid, key):
        if not key:
            return None
        for doc in self.meta.list_docs("jobs"):
            if (doc["kind"] == kind and doc["experiment_id"] == eid
                    and doc["idempotency_key"] == key
                    and doc["status"] == "SUCCEEDED"):
                return doc
        return None

    def _submit(self, kind, eid, args, runner, start_event=None,
                success_event=None, failure_event=None,
                idempotency_key=None, allow_concurrent=False):
        with self.meta.lock:
            existing = self._find_idempotent(kind, eid, idempotency_key)
            if existing is not None:
                return existing
            if not allow_concurrent:
                for doc in self.meta.list_docs("jobs"):
                    if (doc["kind"] == kind and doc["experiment_id"] == eid
                            and doc["status"] in RUNNING_STATUSES):
                        raise ConflictError(
                            f"a {kind} job ({doc['job_id']}) is already active "
                            f"for experiment {eid}")
            if start_event:
                self._transition_locked(eid, start_event)
            job_id = self.meta.next_id("jobs", "job")
            job = models.new_job(job_id, kind, eid, args, idempotency_key)
            self.meta.save("jobs", job_id, job)
        fut = self.executor.submit(self._run_job, job_id, runner,
                                   eid, success_event, failure_event)
        self._futures[job_id] = fut
        return job

    def _run_job(self, job_id, runner, eid, success_event, failure_event):
        with self.meta.lock:
            job = self.meta.load("jobs", job_id)
            job["status"] = "RUNNING"
            job["started_at"] = now_iso()
            self.meta.save("jobs", job_id, job)
        try:
            result = runner(job)
        except Exception as exc:                    # job thread: record, never raise
            with self.meta.lock:
                job = self.meta.load("jobs", job_id)
                job["status"] = "FAILED"
                job["error"] = str(exc) or type(exc).__name__
                job["finished_at"] = now_iso()
                self.meta.save("jobs", job_id, job)
                if failure_event and eid:
                    self._transition_locked(eid, failure_event)
            return
        with self.meta.lock:
            job = self.meta.load("jobs", job_id)
            job["status"] = "SUCCEEDED"
            job["result"] = result
            job["finished_at"] = now_iso()
            self.meta.save("jobs", job_id, job)
            if success_event and eid:
                self._transition_locked(eid, success_event)

    # -- dataprep -----------------------------------------------------------

    def run_dataprep(self, eid: str, args: dict | None = None) -> dict:
        args = dict(args or {})
        self.get_experiment(eid)
        return self._submit("dataprep", eid, args, self._job_dataprep,
                            start_event="start_dataprep",
                            success_event="dataprep_succeeded",
                            failure_event="dataprep_failed",
                            idempotency_key=args.pop("idempotency_key", None))

    def _job_dataprep(self, job: dict) -> dict:
        eid = job["experiment_id"]
        exp = self.get_experiment(eid)
        date_range = exp["date_range"]
        spec = DatasetSpec(
            profile_ids=tuple(exp["profile_ids"]),
            label_set_id=exp["label_set_id"],
            date_range={k: tuple(v) for k, v in date_range.items()}
            if date_range else None,
            transient_dir=exp["transient_dir"],
            val_fraction=exp["val_fraction"],
            split_seed=exp["split_seed"],
        )
        data_dir = self._data_dir(eid)
        train_ex, val_ex, manifest = build_dataset(self.store, self.labels,
                                                   spec, out_dir=data_dir)
        with self.meta.lock:
            doc = self.meta.load("experiments", eid)
            doc["data_dir"] = os.path.relpath(data_dir, self.root)
            doc["updated_at"] = now_iso()
            self.meta.save("experiments", eid, doc)
        return {"train_tiles": len(train_ex), "val_tiles": len(val_ex),
                "channels": manifest["C"]}

    # -- training -----------------------------------------------------------

    def run_training(self, eid: str, args: dict | None = None) -> dict:
        args = dict(args or {})
        exp = self.get_experiment(eid)
        args["warm_start"] = bool(args.get("warm_start",
                                           exp["state"] == models.TRAINED))
        return self._submit("train", eid, args, self._job_train,
                            start_event="start_training",
                            success_event="training_succeeded",
                            failure_event="training_failed",
                            idempotency_key=args.pop("idempotency_key", None))

    def _resolve_hyperparams(self, exp: dict, args: dict) -> Hyperparams:
        merged = {"epochs": 5}
        merged.update(exp["hyperparams"])
        merged.update(args.get("hyperparams") or {})
        if "epochs" in args:
            merged["epochs"] = args["epochs"]
        return Hyperparams.from_json(merged)

    def _model_spec(self, exp: dict, manifest: dict) -> ModelSpec:
        tasks = tuple((t["task_name"], t["class_count"])
                      for t in manifest["tasks"])
        return ModelSpec(exp["architecture_id"], manifest["C"], tasks)

    def _job_train(self, job: dict) -> dict:
        eid = job["experiment_id"]
        exp = self.get_experiment(eid)
        train_ex, val_ex, manifest = load_dataset(self._data_dir(eid))
        spec = self._model_spec(exp, manifest)
        hp = self._resolve_hyperparams(exp, job["args"])
        warm = None
        if job["args"].get("warm_start"):
            names = self._checkpoints_on_disk(eid)
            if names:
                warm = load_checkpoint(os.path.join(self._ckpt_dir(eid), names[-1]))
        final, _history = train(train_ex, val_ex, spec, hp, warm_start=warm,
                                checkpoint_every=int(job["args"].get("checkpoint_every", 5)),
                                out_dir=self._ckpt_dir(eid))
        with self.meta.lock:
            doc = self.meta.load("experiments", eid)
            doc["checkpoints"] = self._checkpoints_on_disk(eid)
            doc["last_metrics"] = final.metrics_snapshot
            doc["updated_at"] = now_iso()
            self.meta.save("experiments", eid, doc)
        return {"final_epoch": final.epoch,
                "checkpoint": f"ckpt_{final.epoch:04d}.trnk",
                "val_total_loss": final.metrics_snapshot["total_loss"]}

    # -- automl -------------------------------------------------------------

    def run_automl(self, eid: str, args: dict | None = None) -> dict:
        args = dict(args or {})
        if not args.get("ranges"):
            raise ValidationError("automl args need 'ranges'")
        self.get_experiment(eid)
        return self._submit("automl", eid, args, self._job_automl,
                            start_event="start_training",
                            success_event="training_succeeded",
                            failure_event="training_failed",
                            idempotency_key=args.pop("idempotency_key", None))

    def _job_automl(self, job: dict) -> dict:
        eid = job["experiment_id"]
        exp = self.get_experiment(eid)
        args = job["args"]
        train_ex, val_ex, manifest = load_dataset(self._data_dir(eid))
        spec = self._model_spec(exp, manifest)
        out_dir = os.path.join(self._exp_dir(eid), "automl")
        best_hp, best_ckpt, table, best_index = automl_search(
            train_ex, val_ex, spec,
            ranges=args["ranges"],
            n_trials=int(args.get("n_trials", 4)),
            parallelism=int(args.get("parallelism", 1)),
            seed=int(args.get("seed", 0)),
            epochs=int(args.get("epochs", 3)),
            out_dir=out_dir,
        )
        trial_dir = os.path.join(out_dir, f"trial_{best_index:03d}")
        ckpt_dir = self._ckpt_dir(eid)
        os.makedirs(ckpt_dir, exist_ok=True)
        name = f"ckpt_{best_ckpt.epoch:04d}.trnk"
        shutil.copyfile(os.path.join(trial_dir, name),
                        os.path.join(ckpt_dir, name))
        hist = os.path.join(trial_dir, "history.jsonl")
        if os.path.exists(hist):
            shutil.copyfile(hist, os.path.join(ckpt_dir, "history.jsonl"))
        with open(os.path.join(out_dir, "table.json"), "w", encoding="utf-8") as f:
            json.dump(table, f, indent=2)
        with self.meta.lock:
            doc = self.meta.load("experiments", eid)
            doc["hyperparams"] = best_hp.to_json()
            doc["checkpoints"] = self._checkpoints_on_disk(eid)
            doc["last_metrics"] = best_ckpt.metrics_snapshot
            doc["updated_at"] = now_iso()
            self.meta.save("experiments", eid, doc)
        return {"best_index": best_index, "best_hyperparams": best_hp.to_json(),
                "table": table}

    # -- prediction ---------------------------------------------------------

    def run_prediction(self, eid: str, args: dict | None = None) -> dict:
        args = dict(args or {})
        exp = self.get_experiment(eid)
        bbox = args.get("bbox")
        if not bbox or len(bbox) != 4:
            raise ValidationError("predict args need bbox [min_lon, min_lat, max_lon, max_lat]")
        BBox(*[float(v) for v in bbox])
        names = self._checkpoints_on_disk(eid)
        state = exp["state"]
        if state not in (models.TRAINED, models.TRAINING) or not names:
            raise StateError(
                f"experiment {eid} is {state} with {len(names)} checkpoints; "
                "predictions need a trained model or a mid-training checkpoint")
        chosen = args.get("checkpoint") or names[-1]
        if chosen not in names:
            raise ValidationError(f"unknown checkpoint {chosen!r}")
        args["checkpoint"] = chosen
        key = args.pop("idempotency_key", None)
        job = self._submit("predict", eid, args, self._job_predict,
                           idempotency_key=key, allow_concurrent=True)
        with self.meta.lock:
            doc = self.meta.load("experiments", eid)
            if job["job_id"] not in doc["prediction_job_ids"]:
                doc["prediction_job_ids"].append(job["job_id"])
                self.meta.save("experiments", eid, doc)
        return job

    def _job_predict(self, job: dict) -> dict:
        eid = job["experiment_id"]
        args = job["args"]
        manifest = self._manifest(eid)
        region = BBox(*[float(v) for v in args["bbox"]])
        out_dir = self._pred_dir(job["job_id"])
        ckpt_path = os.path.join(self._ckpt_dir(eid), args["checkpoint"])
        override = args.get("date_override")
        if override is not None:
            override = {k: tuple(v) for k, v in override.items()}
        paths = predict_region(self.store.root, manifest, ckpt_path, region,
                               out_dir, workers=int(args.get("workers", 1)),
                               date_override=override)
        tile_keys = []
        for p in sorted(paths):
            stem = os.path.basename(p)[:-5]
            x, y = stem.split("_")
            tile_keys.append([int(x), int(y)])
        return {"tiles": len(paths), "checkpoint": args["checkpoint"],
                "tile_keys": sorted(tile_keys)}

    def _require_succeeded_predict(self, job_id: str) -> dict:
        job = self.get_job(job_id)
        if job["kind"] != "predict":
            raise ValidationError(f"job {job_id} is a {job['kind']} job, not predict")
        if job["status"] != "SUCCEEDED":
            raise StateError(f"prediction job {job_id} is {job['status']}")
        return job

    def _load_heatmaps(self, job: dict):
        manifest = self._manifest(job["experiment_id"])
        names = [t["task_name"] for t in manifest["tasks"]]
        out_dir = self._pred_dir(job["job_id"])
        hms = [read_heatmap(heatmap_path(out_dir, TileKey(x, y)), names)
               for x, y in job["result"]["tile_keys"]]
        return hms, manifest

    # -- active learning ----------------------------------------------------

    @staticmethod
    def tile_uncertainty(hm) -> float:
        """Mean over tasks of the mean per-pixel normalized entropy."""
        per_task = []
        for conf in hm.confidences:
            k = conf.shape[0]
            # log only where p > 0; zero-probability terms contribute nothing
            p = np.where(conf > 0, conf.astype(np.float64), 1.0)
            h = -np.sum(p * np.log(p), axis=0)
            per_task.append(float(np.mean(h)) / math.log(k))
        return float(np.mean(per_task))

    def active_learning_select(self, prediction_job_id: str, k: int) -> dict:
        if not isinstance(k, int) or k < 1:
            raise ValidationError("k must be an integer >= 1")
        job = self._require_succeeded_predict(prediction_job_id)
        eid = job["experiment_id"]
        exp = self.get_experiment(eid)
        hms, _manifest = self._load_heatmaps(job)
        labeled = {(t.x, t.y) for t
                   in self.labels.get_label_set(exp["label_set_id"]).labeled_tiles()}
        scored = []
        for hm in hms:
            key = (hm.tile.x, hm.tile.y)
            if key in labeled:
                continue
            scored.append((self.tile_uncertainty(hm), key))
        if not scored:
            raise ValidationError("no unlabeled candidate tiles in this prediction")
        scored.sort(key=lambda t: (-t[0], t[1]))
        requested = k
        warning = None
        if k > len(scored):
            warning = (f"requested {k} tiles but only {len(scored)} candidates; "
                       "clamped")
            k = len(scored)
        chosen = scored[:k]
        with self.meta.lock:
            round_id = self.meta.next_id("rounds", "al")
            set_id = f"{exp['label_set_id']}_{round_id}"
            self.labels.clone_label_set(exp["label_set_id"], set_id)
            task = self.labels.create_labeling_task(
                [TileKey(x, y) for _, (x, y) in chosen],
                origin="active_learning", label_set_id=set_id,
                task_id=f"lt_{round_id}")
            doc = models.new_round(
                round_id, eid, prediction_job_id, requested,
                tiles=[[x, y] for _, (x, y) in chosen],
                uncertainties=[u for u, _ in chosen],
                label_task_id=task.task_id, label_set_id=set_id,
                warning=warning)
            self.meta.save("rounds", round_id, doc)
        return doc

    def get_round(self, round_id: str) -> dict:
        return self.meta.load("rounds", round_id)

    def list_rounds(self) -> list:
        return self.meta.list_docs("rounds")

    def active_learning_complete(self, round_id: str) -> dict:
        with self.meta.lock:
            rnd = self.meta.load("rounds", round_id)
            if rnd["clone_experiment_id"]:
                return self.get_experiment(rnd["clone_experiment_id"])
            task = self.labels.get_task(rnd["label_task_id"])
            if task.status != "completed":
                raise StateError(
                    f"labeling task {task.task_id} is still {task.status}")
            clone = self.clone_experiment(rnd["source_experiment_id"],
                                          {"label_set_id": rnd["label_set_id"]})
            rnd["clone_experiment_id"] = clone["experiment_id"]
            self.meta.save("rounds", round_id, rnd)
            return clone

    # -- evaluation ---------------------------------------------------------

    def evaluate_against_golden(self, prediction_job_id: str, golden_wkt: str,
                                task: str, class_index: int, tau: float) -> dict:
        job = self._require_succeeded_predict(prediction_job_id)
        hms, manifest = self._load_heatmaps(job)
        names = [t["task_name"] for t in manifest["tasks"]]
        if task not in names:
            raise ValidationError(f"unknown task {task!r}")
        counts = {t["task_name"]: t["class_count"] for t in manifest["tasks"]}
        if not 0 <= class_index < counts[task]:
            raise ValidationError(f"class index {class_index} out of range")
        if not 0.0 < tau <= 1.0:
            raise ValidationError("tau must be in (0, 1]")
        geoms = parse_wkt(golden_wkt)
        if not geoms:
            raise ValidationError("golden WKT contains no geometries")
        stripped = [Geometry(g.kind, g.coordinates, None) for g in geoms]
        job_tiles = {(x, y) for x, y in job["result"]["tile_keys"]}
        covered = set()
        for g in stripped:
            covered |= {(t.x, t.y) for t in geometry_tiles(g)}
        if not covered & job_tiles:
            raise ValidationError("golden geometries do not overlap the predicted tiles")
        idx = names.index(task)
        tp = fp = fn = tn = 0
        for hm in hms:
            golden = rasterize(stripped, hm.tile, 2) == 1
            pred = hm.confidences[idx][class_index] >= tau
            tp += int(np.sum(pred & golden))
            fp += int(np.sum(pred & ~golden))
            fn += int(np.sum(~pred & golden))
            tn += int(np.sum(~pred & ~golden))
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 1.0
        f1 = 0.0 if precision + recall == 0 else \
            2 * precision * recall / (precision + recall)
        iou = tp / (tp + fp + fn) if tp + fp + fn else 1.0
        return {"tp": tp, "fp": fp, "fn": fn, "tn": tn,
                "precision": precision, "recall": recall, "f1": f1, "iou": iou,
                "tiles": len(hms)}

    # -- postprocess --------------------------------------------------------

    def postprocess(self, prediction_job_id: str, params: dict) -> dict:
        op = (params or {}).get("op")
        if op == "filter":
            self.get_job(prediction_job_id)
            feats = params.get("features")
            if not isinstance(feats, list):
                raise ValidationError("filter needs a 'features' list")
            return {"op": op,
                    "features": predicate_filter(feats, params.get("predicate"))}
        if op not in ("vectorize", "mapmatch"):
            raise ValidationError(
                f"unknown postprocess op {op!r}; expected vectorize, mapmatch or filter")
        job = self._require_succeeded_predict(prediction_job_id)
        hms, manifest = self._load_heatmaps(job)
        task = params.get("task")
        names = [t["task_name"] for t in manifest["tasks"]]
        if task not in names:
            raise ValidationError(f"unknown task {task!r}")
        class_index = int(params.get("class_index", 1))
        tau = float(params.get("tau", 0.5))
        pixels = threshold_filter(hms, task, class_index, tau)
        if op == "vectorize":
            result = weighted_dbscan(pixels,
                                     eps=float(params.get("eps", 3.0)),
                                     min_weight=float(params.get("min_weight", 3.0)))
            feats = cluster_features(result, pixels)
            if params.get("predicate"):
                feats = predicate_filter(feats, params["predicate"])
            body = []
            for feat in feats:
                d = {k: v for k, v in feat.items() if k != "geometry"}
                d["wkt"] = serialize_wkt(feat["geometry"])
                body.append(d)
            return {"op": op, "points": len(pixels), "noise": len(result.noise),
                    "features": body,
                    "geojson": json.loads(features_to_geojson(feats))}
        network = parse_road_network(params.get("network_wkt") or "")
        scores = map_match(pixels, network,
                           radius_m=float(params.get("radius_m", 20.0)),
                           score_tau=float(params.get("score_tau", 0.0)))
        by_id = {s.segment_id: s for s in network}
        feats = [{"segment_id": sid, "score": score,
                  "attributes": by_id[sid].attributes,
                  "geometry": Geometry("linestring", list(by_id[sid].polyline))}
                 for sid, score in scores]
        if params.get("predicate"):
            feats = predicate_filter(feats, params["predicate"])
        body = [{k: v for k, v in f.items() if k != "geometry"} for f in feats]
        return {"op": op, "points": len(pixels), "scores": body,
                "geojson": json.loads(features_to_geojson(feats))}

    # -- heatmap tiles for the UI -------------------------------------------

    def heatmap_png(self, prediction_job_id: str, task: str,
                    class_index: int, x: int, y: int) -> str:
        job = self._require_succeeded_predict(prediction_job_id)
        out_dir = self._pred_dir(prediction_job_id)
        tile = TileKey(x, y)
        png = viz_path(out_dir, task, class_index, tile)
        if os.path.exists(png):
            return png
        hm_file = heatmap_path(out_dir, tile)
        if not os.path.exists(hm_file):
            raise NotFoundError(f"no heatmap for tile {x}/{y} in job {prediction_job_id}")
        manifest = self._manifest(job["experiment_id"])
        names = [t["task_name"] for t in manifest["tasks"]]
        hm = read_heatmap(hm_file, names)
        render_heatmap_png(hm, task, class_index, png)
        return png
