"""HTTP surface over ExperimentService.

Every response body is JSON except heatmap tile PNGs, metric history
(JSON lines) and the optional static UI. Errors use a uniform
{error_code, message} body: 400 validation, 404 not found, 409
conflict/state, 401 bad token, 500 internal.
"""

from __future__ import annotations

import json
import os

from fastapi import APIRouter, Body, Depends, FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from ..errors import (
    ConflictError,
    NotFoundError,
    StateError,
    TrinityError,
    ValidationError,
)

TOKEN_HEADER = "x-trinity-token"


class _AuthFailure(Exception):
    pass


def create_app(service, token: str | None = None,
               static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="trinity-lite", docs_url=None, redoc_url=None)

    def _error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status,
                            content={"error_code": code, "message": message})

    @app.exception_handler(_AuthFailure)
    async def _auth(request, exc):
        return _error(401, "unauthorized", "missing or invalid token")

    @app.exception_handler(ValidationError)
    async def _validation(request, exc):
        return _error(400, "validation", str(exc))

    @app.exception_handler(NotFoundError)
    async def _not_found(request, exc):
        return _error(404, "not_found", str(exc))

    @app.exception_handler(ConflictError)
    async def _conflict(request, exc):
        return _error(409, "conflict", str(exc))

    @app.exception_handler(StateError)
    async def _state(request, exc):
        return _error(409, "state", str(exc))

    @app.exception_handler(TrinityError)
    async def _trinity(request, exc):
        return _error(500, "internal", str(exc))

    @app.exception_handler(Exception)
    async def _internal(request, exc):
        return _error(500, "internal", f"{type(exc).__name__}: {exc}")

    def require_token(request: Request):
        if token and request.headers.get(TOKEN_HEADER) != token:
            raise _AuthFailure()

    api = APIRouter(prefix="/api", dependencies=[Depends(require_token)])

    # -- projects and experiments -------------------------------------------

    @api.post("/projects", status_code=201)
    def create_project(payload: dict = Body(...)):
        return service.create_project(payload.get("name"),
                                      payload.get("description", ""))

    @api.get("/projects")
    def list_projects():
        return service.list_projects()

    @api.get("/projects/{project_id}")
    def get_project(project_id: str):
        doc = service.get_project(project_id)
        doc["experiments"] = service.list_experiments(project_id)
        return doc

    @api.post("/projects/{project_id}/experiments", status_code=201)
    def create_experiment(project_id: str, payload: dict = Body(...)):
        return service.create_experiment(project_id, payload)

    @api.get("/experiments/{eid}")
    def get_experiment(eid: str):
        return service.get_experiment(eid)

    @api.post("/experiments/{eid}/clone", status_code=201)
    def clone_experiment(eid: str, payload: dict = Body(default={})):
        overrides = payload.get("overrides") if "overrides" in payload else payload
        return service.clone_experiment(eid, overrides)

    @api.patch("/experiments/{eid}")
    def patch_experiment(eid: str, payload: dict = Body(...)):
        return service.update_experiment(eid, payload)

    @api.post("/experiments/{eid}/reset")
    def reset_experiment(eid: str):
        return service.transition(eid, "reset")

    # -- jobs ---------------------------------------------------------------

    @api.post("/experiments/{eid}/dataprep", status_code=202)
    def run_dataprep(eid: str, payload: dict = Body(default={})):
        return service.run_dataprep(eid, payload)

    @api.post("/experiments/{eid}/train", status_code=202)
    def run_training(eid: str, payload: dict = Body(default={})):
        return service.run_training(eid, payload)

    @api.post("/experiments/{eid}/automl", status_code=202)
    def run_automl(eid: str, payload: dict = Body(default={})):
        return service.run_automl(eid, payload)

    @api.post("/experiments/{eid}/predict", status_code=202)
    def run_prediction(eid: str, payload: dict = Body(default={})):
        return service.run_prediction(eid, payload)

    @api.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return service.get_job(job_id)

    @api.get("/jobs")
    def list_jobs(experiment_id: str | None = None):
        return service.list_jobs(experiment_id)

    @api.get("/experiments/{eid}/metrics")
    def get_metrics(eid: str):
        service.get_experiment(eid)
        path = os.path.join(service._ckpt_dir(eid), "history.jsonl")
        text = ""
        if os.path.exists(path):
            with open(path, encoding="utf-8") as f:
                text = f.read()
        return PlainTextResponse(text, media_type="application/x-ndjson")

    # -- catalogs -----------------------------------------------------------

    @api.get("/catalog/profiles")
    def catalog_profiles():
        return service.list_profiles()

    @api.get("/catalog/architectures")
    def catalog_architectures():
        return service.list_architectures()

    @api.get("/catalog/label-sets")
    def catalog_label_sets():
        return service.list_label_sets()

    # -- labels -------------------------------------------------------------

    @api.post("/labels/upload", status_code=201)
    async def upload_labels(request: Request):
        form = await request.form()
        label_set_id = form.get("label_set_id")
        tasks_raw = form.get("tasks")
        if not tasks_raw:
            raise ValidationError("multipart field 'tasks' is required")
        try:
            tasks = json.loads(tasks_raw)
        except ValueError:
            raise ValidationError("'tasks' must be JSON mapping name to class count")
        region = None
        if form.get("region"):
            try:
                region = json.loads(form.get("region"))
            except ValueError:
                raise ValidationError("'region' must be a JSON bbox array")
        files = {}
        for name, value in form.multi_items():
            if hasattr(value, "read"):
                files[name] = (await value.read()).decode("utf-8")
        return service.upload_labels(label_set_id, tasks, region, files)

    @api.get("/labels/tasks")
    def list_label_tasks():
        return service.list_label_tasks()

    @api.post("/labels/tasks/{task_id}/annotations")
    def add_annotations(task_id: str, payload: dict = Body(...)):
        return service.add_annotations(task_id, payload.get("wkt", ""),
                                       payload.get("task_name"))

    # -- active learning ----------------------------------------------------

    @api.post("/predictions/{job_id}/active-learning", status_code=201)
    def al_select(job_id: str, payload: dict = Body(...)):
        return service.active_learning_select(job_id, payload.get("k"))

    @api.post("/active-learning/{round_id}/complete")
    def al_complete(round_id: str):
        return service.active_learning_complete(round_id)

    @api.get("/active-learning/{round_id}")
    def al_get(round_id: str):
        return service.get_round(round_id)

    @api.get("/active-learning")
    def al_list():
        return service.list_rounds()

    # -- postprocess and evaluation -----------------------------------------

    @api.post("/predictions/{job_id}/postprocess")
    def postprocess(job_id: str, payload: dict = Body(...)):
        return service.postprocess(job_id, payload)

    @api.post("/predictions/{job_id}/evaluate")
    def evaluate(job_id: str, payload: dict = Body(...)):
        return service.evaluate_against_golden(
            job_id, payload.get("golden_wkt", ""), payload.get("task"),
            int(payload.get("class_index", 1)), float(payload.get("tau", 0.5)))

    @api.get("/predictions/{job_id}/tiles/{task}/{class_index}/16/{x}/{y}.png")
    def heatmap_tile(job_id: str, task: str, class_index: int, x: int, y: int):
        path = service.heatmap_png(job_id, task, class_index, x, y)
        return FileResponse(path, media_type="image/png")

    app.include_router(api)

    if static_dir and os.path.isdir(static_dir):
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
