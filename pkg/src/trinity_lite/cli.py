"""Operator command line: a thin client for the HTTP API plus offline
utilities for store ingestion and binary file inspection.

Remote commands resolve the server from --server, then TRINITY_SERVER,
then ~/.trinity-lite.toml (key=value lines). Exit codes: 1 when the
request is rejected, 2 when the server cannot be reached, 3 when the
server or a waited-on job fails.
"""

from __future__ import annotations

import json
import os
import re
import sys
import time

import click
import numpy as np
import requests

TOKEN_HEADER = "x-trinity-token"
DEFAULT_SERVER = "http://127.0.0.1:8321"
CONFIG_PATH = "~/.trinity-lite.toml"
POLL_SECONDS = 1.0


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def load_config(path: str | None = None) -> dict:
    """key=value lines; unknown keys ignored, quotes stripped."""
    cfg = {"server_url": None, "token": None, "out_dir": "."}
    path = os.path.expanduser(path or CONFIG_PATH)
    if os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#") or "=" not in line:
                    continue
                key, value = line.split("=", 1)
                key = key.strip()
                value = value.strip().strip('"').strip("'")
                if key in cfg:
                    cfg[key] = value
    return cfg


def _json_arg(value: str, what: str):
    """Inline JSON, or @path to read it from a file."""
    if value.startswith("@"):
        try:
            with open(value[1:], encoding="utf-8") as f:
                value = f.read()
        except OSError as exc:
            raise CliFailure(1, f"cannot read {what} file: {exc}")
    try:
        return json.loads(value)
    except ValueError as exc:
        raise CliFailure(1, f"{what} is not valid JSON: {exc}")


def _bbox_arg(value: str) -> list:
    parts = value.split(",")
    if len(parts) != 4:
        raise CliFailure(1, "bbox must be min_lon,min_lat,max_lon,max_lat")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise CliFailure(1, f"bbox has a non-numeric part: {value!r}")


class Api:
    def __init__(self, server: str, token: str | None):
        self.server = server.rstrip("/")
        self.token = token

    def request(self, method: str, path: str, **kw):
        headers = kw.pop("headers", {})
        if self.token:
            headers[TOKEN_HEADER] = self.token
        try:
            resp = requests.request(method, self.server + path,
                                    headers=headers, timeout=600, **kw)
        except requests.RequestException as exc:
            raise CliFailure(2, f"cannot reach {self.server}: {exc}")
        if resp.status_code >= 400:
            try:
                body = resp.json()
                message = f"{body['error_code']}: {body['message']}"
            except (ValueError, KeyError):
                message = f"HTTP {resp.status_code}: {resp.text[:200]}"
            raise CliFailure(3 if resp.status_code >= 500 else 1, message)
        return resp

    def get(self, path: str, **kw):
        return self.request("GET", path, **kw).json()

    def post(self, path: str, payload=None, **kw):
        if payload is not None:
            kw["json"] = payload
        return self.request("POST", path, **kw).json()


def _api(ctx) -> Api:
    return Api(ctx.obj["server"], ctx.obj["token"])


def _emit(ctx, payload, human=None):
    if ctx.obj["json"]:
        click.echo(json.dumps(payload, indent=2, sort_keys=True, default=str))
    elif human is not None:
        human(payload)
    else:
        click.echo(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _kv(pairs):
    width = max((len(k) for k, _ in pairs), default=0)
    for key, value in pairs:
        click.echo(f"{key.ljust(width)}  {value}")


def _wait_job(ctx, api: Api, job_id: str, timeout: float) -> dict:
    deadline = time.monotonic() + timeout
    last = None
    while True:
        job = api.get(f"/api/jobs/{job_id}")
        if job["status"] != last and not ctx.obj["json"]:
            click.echo(f"job {job_id}: {job['status']}", err=True)
            last = job["status"]
        if job["status"] == "SUCCEEDED":
            return job
        if job["status"] == "FAILED":
            raise CliFailure(3, f"job {job_id} failed: {job['error']}")
        if time.monotonic() > deadline:
            raise CliFailure(3, f"timed out after {timeout:.0f}s waiting on {job_id}")
        time.sleep(POLL_SECONDS)


def _job_result(ctx, api, job: dict, wait: bool, timeout: float):
    if wait:
        job = _wait_job(ctx, api, job["job_id"], timeout)
    _emit(ctx, job, lambda j: _kv([
        ("job", j["job_id"]), ("kind", j["kind"]), ("status", j["status"]),
        ("experiment", str(j.get("experiment_id"))),
    ]))


def wait_option(fn):
    fn = click.option("--timeout", type=float, default=900.0,
                      show_default=True, help="--wait limit in seconds")(fn)
    fn = click.option("--wait", is_flag=True,
                      help="poll until the job finishes")(fn)
    return fn


@click.group()
@click.option("--server", default=None, help="API base URL")
@click.option("--token", default=None, help="auth token")
@click.option("--config", "config_path", default=None,
              help=f"config file (default {CONFIG_PATH})")
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
@click.pass_context
def cli(ctx, server, token, config_path, as_json):
    cfg = load_config(config_path)
    ctx.obj = {
        "server": server or os.environ.get("TRINITY_SERVER")
        or cfg["server_url"] or DEFAULT_SERVER,
        "token": token or os.environ.get("TRINITY_TOKEN") or cfg["token"],
        "out_dir": cfg["out_dir"],
        "json": as_json,
    }


# -- server -----------------------------------------------------------------


@cli.command()
@click.option("--root", required=True, type=click.Path(), help="service data root")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True, type=int)
@click.option("--job-workers", default=2, show_default=True, type=int)
@click.option("--static-dir", default=None, type=click.Path(),
              help="directory with the web UI (default: ./frontend/dist if present)")
@click.pass_context
def serve(ctx, root, host, port, job_workers, static_dir):
    """Run the API server over a data root."""
    import uvicorn

    from .service import ExperimentService
    from .service.api import create_app

    if static_dir is None and os.path.isdir("frontend/dist"):
        static_dir = "frontend/dist"
    service = ExperimentService(root, max_workers=job_workers)
    app = create_app(service, token=ctx.obj["token"], static_dir=static_dir)
    click.echo(f"serving {root} on http://{host}:{port}", err=True)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        service.shutdown()


# -- catalog ----------------------------------------------------------------


@cli.group()
def catalog():
    """Browse profiles, architectures and label sets."""


@catalog.command("list")
@click.pass_context
def catalog_list(ctx):
    api = _api(ctx)
    body = {
        "profiles": api.get("/api/catalog/profiles"),
        "architectures": api.get("/api/catalog/architectures"),
        "label_sets": api.get("/api/catalog/label-sets"),
    }

    def human(b):
        for profile in b["profiles"]:
            click.echo(f"profile      {profile['profile_id']}  "
                       f"channels={len(profile['channel_names'])}  "
                       f"temporal={profile['temporal']}")
        for arch in b["architectures"]:
            click.echo(f"architecture {arch['architecture_id']}")
        for ls in b["label_sets"]:
            click.echo(f"label-set    {ls['label_set_id']}  "
                       f"tasks={len(ls['tasks'])}  tiles={ls['tile_count']}")

    _emit(ctx, body, human)


# -- offline store ingestion ------------------------------------------------

_TILE_FILE = re.compile(r"^(\d+)_(\d+)\.(trc|npy)$")


def _read_planes(path: str):
    from .store import decode_trc

    if path.endswith(".npy"):
        return np.asarray(np.load(path), dtype=np.float32)
    with open(path, "rb") as f:
        return np.stack(decode_trc(f.read()).to_planes())


def _scan_tiles(tile_dir: str, dates: list) -> list:
    """(date or None, x, y, path) for every payload file."""
    out = []
    if dates:
        for date in dates:
            sub = os.path.join(tile_dir, date)
            if not os.path.isdir(sub):
                continue
            for name in sorted(os.listdir(sub)):
                m = _TILE_FILE.match(name)
                if m:
                    out.append((date, int(m.group(1)), int(m.group(2)),
                                os.path.join(sub, name)))
    else:
        for name in sorted(os.listdir(tile_dir)):
            m = _TILE_FILE.match(name)
            if m:
                out.append((None, int(m.group(1)), int(m.group(2)),
                            os.path.join(tile_dir, name)))
    return out


@cli.group()
def profile():
    """Offline channel-store management."""


@profile.command("ingest")
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@click.option("--root", required=True, type=click.Path(),
              help="service data root (the store lives in <root>/store)")
@click.option("--compute-stats/--keep-stats", default=True, show_default=True,
              help="derive per-channel normalization from the data")
@click.pass_context
def profile_ingest(ctx, directory, root, compute_stats):
    """Load profile.json plus tiles/<x>_<y>.trc|.npy (temporal profiles
    nest one directory per date) into a service store."""
    from .geo import TileKey
    from .store import ChannelStore, ProfileMeta, SparseTileRecord

    meta_path = os.path.join(directory, "profile.json")
    if not os.path.exists(meta_path):
        raise CliFailure(1, f"{directory} has no profile.json")
    with open(meta_path, encoding="utf-8") as f:
        raw = json.load(f)

    tile_dir = os.path.join(directory, "tiles")
    if not os.path.isdir(tile_dir):
        raise CliFailure(1, f"{directory} has no tiles/ directory")
    dates = raw.get("dates") or []
    if raw.get("temporal") and not dates:
        dates = sorted(d for d in os.listdir(tile_dir)
                       if os.path.isdir(os.path.join(tile_dir, d)))
        raw["dates"] = dates
    found = _scan_tiles(tile_dir, dates)
    if not found:
        raise CliFailure(1, f"no <x>_<y>.trc or .npy files under {tile_dir}")

    n_channels = len(raw.get("channel_names") or [])
    if compute_stats and not raw.get("normalization"):
        total = np.zeros(n_channels)
        total_sq = np.zeros(n_channels)
        count = 0
        for _, _, _, path in found:
            planes = _read_planes(path)
            total += planes.reshape(n_channels, -1).sum(axis=1)
            total_sq += (planes.astype(np.float64) ** 2) \
                .reshape(n_channels, -1).sum(axis=1)
            count += planes.shape[1] * planes.shape[2]
        mean = total / count
        std = np.sqrt(np.maximum(total_sq / count - mean ** 2, 0.0))
        raw["normalization"] = [
            {"mean": float(m), "std": float(s) if s > 0 else 1.0}
            for m, s in zip(mean, std)]

    store = ChannelStore(os.path.join(root, "store"))
    try:
        meta = ProfileMeta(**raw)
        store.register_profile(meta)
        for date, x, y, path in found:
            record = SparseTileRecord.from_planes(TileKey(x, y), _read_planes(path))
            store.put_tile(meta.profile_id, record, date=date)
    except Exception as exc:
        raise CliFailure(1, str(exc))

    body = {"profile_id": meta.profile_id, "tiles": len(found),
            "dates": dates, "normalization": meta.normalization}
    _emit(ctx, body, lambda b: click.echo(
        f"ingested {b['tiles']} tiles into profile {b['profile_id']}"))


# -- labels -----------------------------------------------------------------


@cli.group()
def labels():
    """Upload label geometry and review annotations."""


@labels.command("upload")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "set_id", required=True, help="new label set id")
@click.option("--task", "task_name", required=True, help="task name")
@click.option("--classes", type=int, default=2, show_default=True)
@click.option("--region", default=None,
              help="labeled bbox min_lon,min_lat,max_lon,max_lat")
@click.pass_context
def labels_upload(ctx, file, set_id, task_name, classes, region):
    """Create a label set from one WKT file."""
    api = _api(ctx)
    data = {"label_set_id": set_id,
            "tasks": json.dumps({task_name: classes})}
    if region:
        data["region"] = json.dumps(_bbox_arg(region))
    with open(file, "rb") as f:
        body = api.request(
            "POST", "/api/labels/upload", data=data,
            files={task_name: (os.path.basename(file), f)}).json()
    _emit(ctx, body, lambda b: click.echo(
        f"label set {b['label_set_id']}: {b['tile_count']} labeled tiles"))


@labels.command("annotate")
@click.argument("task_id")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--task-name", default=None, help="target task (default: every task)")
@click.pass_context
def labels_annotate(ctx, task_id, file, task_name):
    """Attach reviewed WKT to a labeling task and close it."""
    api = _api(ctx)
    with open(file, encoding="utf-8") as f:
        wkt = f.read()
    body = api.post(f"/api/labels/tasks/{task_id}/annotations",
                    {"wkt": wkt, "task_name": task_name})
    _emit(ctx, body, lambda b: click.echo(
        f"task {b['task_id']} is {b['status']}"))


# -- projects and experiments -----------------------------------------------


@cli.group()
def project():
    """Project containers for experiments."""


@project.command("create")
@click.argument("name")
@click.option("--description", default="")
@click.pass_context
def project_create(ctx, name, description):
    body = _api(ctx).post("/api/projects",
                          {"name": name, "description": description})
    _emit(ctx, body, lambda b: click.echo(b["project_id"]))


@project.command("list")
@click.pass_context
def project_list(ctx):
    body = _api(ctx).get("/api/projects")
    _emit(ctx, body, lambda items: [
        click.echo(f"{p['project_id']}  {p['name']}  "
                   f"experiments={len(p['experiment_ids'])}")
        for p in items])


def _exp_summary(doc: dict):
    _kv([
        ("experiment", doc["experiment_id"]),
        ("state", doc["state"]),
        ("architecture", doc["architecture_id"]),
        ("label set", doc["label_set_id"]),
        ("profiles", ",".join(doc["profile_ids"])),
        ("checkpoints", str(len(doc["checkpoints"]))),
        ("parent", str(doc["parent_id"])),
    ])
    if doc.get("last_metrics"):
        click.echo(f"last metrics  {json.dumps(doc['last_metrics'], sort_keys=True)}")


@cli.group()
def exp():
    """Experiment lifecycle."""


@exp.command("create")
@click.argument("config")
@click.option("--project", "project_id", required=True)
@click.pass_context
def exp_create(ctx, config, project_id):
    """CONFIG is inline JSON or @file with the experiment definition."""
    body = _api(ctx).post(f"/api/projects/{project_id}/experiments",
                          _json_arg(config, "config"))
    _emit(ctx, body, lambda b: click.echo(b["experiment_id"]))


@exp.command("status")
@click.argument("eid")
@click.pass_context
def exp_status(ctx, eid):
    _emit(ctx, _api(ctx).get(f"/api/experiments/{eid}"), _exp_summary)


@exp.command("clone")
@click.argument("eid")
@click.option("--overrides", default=None, help="JSON or @file of field overrides")
@click.pass_context
def exp_clone(ctx, eid, overrides):
    payload = {"overrides": _json_arg(overrides, "overrides")} if overrides else {}
    body = _api(ctx).post(f"/api/experiments/{eid}/clone", payload)
    _emit(ctx, body, lambda b: click.echo(b["experiment_id"]))


@exp.command("dataprep")
@click.argument("eid")
@wait_option
@click.pass_context
def exp_dataprep(ctx, eid, wait, timeout):
    api = _api(ctx)
    job = api.post(f"/api/experiments/{eid}/dataprep", {})
    _job_result(ctx, api, job, wait, timeout)


@exp.command("train")
@click.argument("eid")
@click.option("--epochs", type=int, default=None)
@click.option("--hyperparams", default=None, help="JSON or @file overrides")
@wait_option
@click.pass_context
def exp_train(ctx, eid, epochs, hyperparams, wait, timeout):
    payload = {}
    if epochs is not None:
        payload["epochs"] = epochs
    if hyperparams:
        payload["hyperparams"] = _json_arg(hyperparams, "hyperparams")
    api = _api(ctx)
    job = api.post(f"/api/experiments/{eid}/train", payload)
    _job_result(ctx, api, job, wait, timeout)


@exp.command("predict")
@click.argument("eid")
@click.option("--bbox", required=True, help="min_lon,min_lat,max_lon,max_lat")
@click.option("--checkpoint", default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@wait_option
@click.pass_context
def exp_predict(ctx, eid, bbox, checkpoint, workers, wait, timeout):
    payload = {"bbox": _bbox_arg(bbox), "workers": workers}
    if checkpoint:
        payload["checkpoint"] = checkpoint
    api = _api(ctx)
    job = api.post(f"/api/experiments/{eid}/predict", payload)
    _job_result(ctx, api, job, wait, timeout)


@exp.command("metrics")
@click.argument("eid")
@click.pass_context
def exp_metrics(ctx, eid):
    """Print per-epoch training metrics as JSON lines."""
    resp = _api(ctx).request("GET", f"/api/experiments/{eid}/metrics")
    if ctx.obj["json"]:
        rows = [json.loads(line) for line in resp.text.splitlines() if line.strip()]
        click.echo(json.dumps(rows, indent=2, sort_keys=True))
    else:
        click.echo(resp.text, nl=False)


# -- automl -----------------------------------------------------------------


@cli.group()
def automl():
    """Hyperparameter search."""


@automl.command("run")
@click.argument("eid")
@click.option("--ranges", required=True,
              help='JSON like {"learning_rate": [lo, hi], "batch_size": [..]}')
@click.option("--trials", type=int, default=4, show_default=True)
@click.option("--parallelism", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--epochs", type=int, default=3, show_default=True)
@wait_option
@click.pass_context
def automl_run(ctx, eid, ranges, trials, parallelism, seed, epochs, wait, timeout):
    payload = {"ranges": _json_arg(ranges, "ranges"), "n_trials": trials,
               "parallelism": parallelism, "seed": seed, "epochs": epochs}
    api = _api(ctx)
    job = api.post(f"/api/experiments/{eid}/automl", payload)
    _job_result(ctx, api, job, wait, timeout)


# -- post-processing --------------------------------------------------------


@cli.group()
def post():
    """Turn prediction heatmaps into vector artifacts."""


def _write_out(path: str | None, text: str):
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


@post.command("vectorize")
@click.argument("job_id")
@click.option("--task", required=True)
@click.option("--class-index", type=int, default=1, show_default=True)
@click.option("--tau", type=float, default=0.5, show_default=True)
@click.option("--eps", type=float, default=3.0, show_default=True)
@click.option("--min-weight", type=float, default=3.0, show_default=True)
@click.option("--predicate", default=None, help="JSON or @file predicate")
@click.option("--wkt-out", default=None, type=click.Path(),
              help="write polygons as WKT<TAB>score lines")
@click.option("--geojson-out", default=None, type=click.Path())
@click.pass_context
def post_vectorize(ctx, job_id, task, class_index, tau, eps, min_weight,
                   predicate, wkt_out, geojson_out):
    payload = {"op": "vectorize", "task": task, "class_index": class_index,
               "tau": tau, "eps": eps, "min_weight": min_weight}
    if predicate:
        payload["predicate"] = _json_arg(predicate, "predicate")
    body = _api(ctx).post(f"/api/predictions/{job_id}/postprocess", payload)
    _write_out(wkt_out, "".join(
        f"{f['wkt']}\t{f['score']!r}\n" for f in body["features"]))
    _write_out(geojson_out, json.dumps(body["geojson"], sort_keys=True))
    _emit(ctx, body, lambda b: [
        click.echo(f"{len(b['features'])} clusters from {b['points']} pixels "
                   f"({b['noise']} noise)")] + [
        click.echo(f"  cluster {f['cluster_id']}: area={f['area_px']}px "
                   f"score={f['score']:.3f}") for f in b["features"]])


@post.command("mapmatch")
@click.argument("job_id")
@click.option("--task", required=True)
@click.option("--class-index", type=int, default=1, show_default=True)
@click.option("--tau", type=float, default=0.5, show_default=True)
@click.option("--network", required=True, type=click.Path(exists=True),
              help="road file: LINESTRING WKT<TAB>segment_id per line")
@click.option("--radius-m", type=float, default=20.0, show_default=True)
@click.option("--score-tau", type=float, default=0.0, show_default=True)
@click.option("--geojson-out", default=None, type=click.Path())
@click.pass_context
def post_mapmatch(ctx, job_id, task, class_index, tau, network,
                  radius_m, score_tau, geojson_out):
    with open(network, encoding="utf-8") as f:
        network_wkt = f.read()
    payload = {"op": "mapmatch", "task": task, "class_index": class_index,
               "tau": tau, "network_wkt": network_wkt,
               "radius_m": radius_m, "score_tau": score_tau}
    body = _api(ctx).post(f"/api/predictions/{job_id}/postprocess", payload)
    _write_out(geojson_out, json.dumps(body["geojson"], sort_keys=True))
    _emit(ctx, body, lambda b: [
        click.echo(f"{s['segment_id']}\t{s['score']:.6f}") for s in b["scores"]])


@post.command("filter")
@click.argument("job_id")
@click.option("--features", required=True, help="JSON or @file feature list")
@click.option("--predicate", required=True, help="JSON or @file predicate")
@click.pass_context
def post_filter(ctx, job_id, features, predicate):
    payload = {"op": "filter",
               "features": _json_arg(features, "features"),
               "predicate": _json_arg(predicate, "predicate")}
    body = _api(ctx).post(f"/api/predictions/{job_id}/postprocess", payload)
    _emit(ctx, body, lambda b: click.echo(f"{len(b['features'])} features pass"))


@cli.command()
@click.argument("job_id")
@click.option("--golden", required=True, type=click.Path(exists=True),
              help="WKT file with reference geometry")
@click.option("--task", required=True)
@click.option("--class-index", type=int, default=1, show_default=True)
@click.option("--tau", type=float, default=0.5, show_default=True)
@click.pass_context
def evaluate(ctx, job_id, golden, task, class_index, tau):
    """Score a prediction against reference geometry."""
    with open(golden, encoding="utf-8") as f:
        golden_wkt = f.read()
    body = _api(ctx).post(f"/api/predictions/{job_id}/evaluate",
                          {"golden_wkt": golden_wkt, "task": task,
                           "class_index": class_index, "tau": tau})
    _emit(ctx, body, lambda b: _kv([
        ("precision", f"{b['precision']:.4f}"), ("recall", f"{b['recall']:.4f}"),
        ("f1", f"{b['f1']:.4f}"), ("iou", f"{b['iou']:.4f}"),
        ("tp/fp/fn", f"{b['tp']}/{b['fp']}/{b['fn']}"),
    ]))


# -- active learning --------------------------------------------------------


@cli.group()
def al():
    """Uncertainty-driven labeling rounds."""


@al.command("select")
@click.argument("prediction_job_id")
@click.option("--k", type=int, required=True, help="tiles to request")
@click.pass_context
def al_select(ctx, prediction_job_id, k):
    body = _api(ctx).post(
        f"/api/predictions/{prediction_job_id}/active-learning", {"k": k})

    def human(b):
        _kv([("round", b["round_id"]), ("label task", b["label_task_id"]),
             ("label set", b["label_set_id"])])
        for (x, y), u in zip(b["tiles"], b["uncertainties"]):
            click.echo(f"  tile {x}/{y}  uncertainty={u:.4f}")
        if b.get("warning"):
            click.echo(f"warning: {b['warning']}", err=True)

    _emit(ctx, body, human)


@al.command("complete")
@click.argument("round_id")
@click.pass_context
def al_complete(ctx, round_id):
    body = _api(ctx).post(f"/api/active-learning/{round_id}/complete")
    _emit(ctx, body, lambda b: click.echo(b["experiment_id"]))


@al.command("show")
@click.argument("round_id")
@click.pass_context
def al_show(ctx, round_id):
    _emit(ctx, _api(ctx).get(f"/api/active-learning/{round_id}"))


# -- binary inspectors ------------------------------------------------------


@cli.group(name="inspect")
def inspect_cmd():
    """Describe binary artifacts without a server."""


@inspect_cmd.command("trc")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def inspect_trc(ctx, file):
    from .store import TRC_MAGIC, TRC_VERSION, decode_trc

    try:
        with open(file, "rb") as f:
            record = decode_trc(f.read())
    except Exception as exc:
        raise CliFailure(1, f"not a readable tile file: {exc}")
    planes = np.stack(record.to_planes())
    body = {
        "magic": TRC_MAGIC.decode("ascii"),
        "version": TRC_VERSION,
        "tile_x": record.tile.x,
        "tile_y": record.tile.y,
        "channel_count": len(record.channels),
        "nonzero_per_channel": [int(len(idx)) for idx, _ in record.channels],
        "value_min": float(planes.min()),
        "value_max": float(planes.max()),
        "file_bytes": os.path.getsize(file),
    }
    _emit(ctx, body, lambda b: _kv(sorted((k, str(v)) for k, v in b.items())))


@inspect_cmd.command("trhm")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def inspect_trhm(ctx, file):
    from .inference import read_heatmap

    try:
        hm = read_heatmap(file)
    except Exception as exc:
        raise CliFailure(1, f"not a readable heatmap file: {exc}")
    sums = [conf.sum(axis=0) for conf in hm.confidences]
    body = {
        "tile_x": hm.tile.x,
        "tile_y": hm.tile.y,
        "task_count": len(hm.confidences),
        "class_counts": [int(c.shape[0]) for c in hm.confidences],
        "confidence_sum_max_error": float(max(
            np.abs(s - 1.0).max() for s in sums)),
        "file_bytes": os.path.getsize(file),
    }
    _emit(ctx, body, lambda b: _kv(sorted((k, str(v)) for k, v in b.items())))


@inspect_cmd.command("trnk")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def inspect_trnk(ctx, file):
    from .kernel import load_checkpoint

    try:
        ckpt = load_checkpoint(file)
    except Exception as exc:
        raise CliFailure(1, f"not a readable checkpoint file: {exc}")
    body = {
        "architecture": ckpt.spec.architecture_id,
        "in_channels": ckpt.spec.in_channels,
        "tasks": [[name, int(classes)] for name, classes in ckpt.spec.tasks],
        "epoch": ckpt.epoch,
        "tensor_count": len(ckpt.params),
        "parameter_count": int(sum(int(np.prod(p.shape))
                                   for p in ckpt.params.values())),
        "metrics": ckpt.metrics_snapshot,
        "file_bytes": os.path.getsize(file),
    }
    _emit(ctx, body, lambda b: _kv(sorted((k, str(v)) for k, v in b.items())))


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except CliFailure as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(exc.code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)
    return 0


if __name__ == "__main__":
    main()
