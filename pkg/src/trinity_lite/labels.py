"""Label sets, WKT ingestion, rasterization and labeling tasks.

Rasterization rules (deterministic, oracle-checkable):

- polygons fill every pixel whose center passes the even-odd crossing test
  against the polygon's rings (holes subtract);
- linestrings mark the 8-connected digital line between the endpoint pixels
  of each segment: stepping along the major axis, the minor coordinate is
  floor(interpolated + 0.5);
- points mark the pixel containing them;
- overlapping geometries resolve last-wins in input order.

Pixels of tiles outside a task's labeled region rasterize to IGNORE (255);
inside the region, absence of geometry means background (0).
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np

from .errors import ConflictError, NotFoundError, StateError, ValidationError
from .geo import (
    BBox,
    Geometry,
    PIXEL_ZOOM,
    TILE_SIZE,
    TileKey,
    parse_wkt,
    project,
    serialize_wkt,
    tiles_covering,
)
from .store import atomic_write

IGNORE = 255


def _to_tile_px(coords, tile: TileKey) -> np.ndarray:
    """Lon/lat vertices -> continuous pixel coordinates relative to the tile."""
    ox, oy = tile.pixel_origin()
    out = np.empty((len(coords), 2), dtype=np.float64)
    for i, (lon, lat) in enumerate(coords):
        x, y = project(lon, lat, PIXEL_ZOOM)
        out[i, 0] = x - ox
        out[i, 1] = y - oy
    return out


def _fill_rings(mask: np.ndarray, rings_px: list[np.ndarray]) -> None:
    """Even-odd scanline fill at pixel centers over one polygon's rings."""
    x1s, y1s, x2s, y2s = [], [], [], []
    for ring in rings_px:
        x1s.append(ring[:-1, 0]); y1s.append(ring[:-1, 1])
        x2s.append(ring[1:, 0]);  y2s.append(ring[1:, 1])
    x1 = np.concatenate(x1s); y1 = np.concatenate(y1s)
    x2 = np.concatenate(x2s); y2 = np.concatenate(y2s)
    ymin = np.minimum(y1, y2)
    ymax = np.maximum(y1, y2)
    centers = np.arange(TILE_SIZE, dtype=np.float64) + 0.5
    for j in range(TILE_SIZE):
        yc = j + 0.5
        sel = (ymin <= yc) & (yc < ymax)
        if not sel.any():
            continue
        t = (yc - y1[sel]) / (y2[sel] - y1[sel])
        xs = np.sort(x1[sel] + t * (x2[sel] - x1[sel]))
        # center is inside iff the count of crossings strictly to its right is odd
        right = len(xs) - np.searchsorted(xs, centers, side="right")
        mask[j] |= (right % 2).astype(bool)


def _trace_segment(plane: np.ndarray, tag: int, p0: tuple[int, int], p1: tuple[int, int]) -> None:
    """Digital 8-connected line between integer endpoint pixels, clipped to the tile."""
    x0, y0 = p0
    x1, y1 = p1
    dx, dy = x1 - x0, y1 - y0
    if abs(dx) >= abs(dy):
        lo = max(min(x0, x1), 0)
        hi = min(max(x0, x1), TILE_SIZE - 1)
        if lo > hi:
            return
        xs = np.arange(lo, hi + 1)
        if dx == 0:
            ys = np.full_like(xs, y0)
        else:
            ys = np.floor(y0 + (xs - x0) * (dy / dx) + 0.5).astype(np.int64)
        keep = (ys >= 0) & (ys < TILE_SIZE)
        plane[ys[keep], xs[keep]] = tag
    else:
        lo = max(min(y0, y1), 0)
        hi = min(max(y0, y1), TILE_SIZE - 1)
        if lo > hi:
            return
        ys = np.arange(lo, hi + 1)
        xs = np.floor(x0 + (ys - y0) * (dx / dy) + 0.5).astype(np.int64)
        keep = (xs >= 0) & (xs < TILE_SIZE)
        plane[ys[keep], xs[keep]] = tag


def effective_tag(geom: Geometry, class_count: int) -> int:
    """Geometry class tag, defaulting to 1 (foreground) when untagged."""
    tag = 1 if geom.class_tag is None else geom.class_tag
    if not 1 <= tag <= class_count - 1:
        raise ValidationError(
            f"class_tag {tag} outside [1, {class_count - 1}] for a {class_count}-class task")
    return tag


def rasterize(geometries: list[Geometry], tile: TileKey, class_count: int) -> np.ndarray:
    """One 256x256 uint8 class plane; background 0, overlaps last-wins."""
    if not 2 <= class_count <= IGNORE:
        raise ValidationError(f"class_count must be in [2, {IGNORE}]")
    plane = np.zeros((TILE_SIZE, TILE_SIZE), dtype=np.uint8)
    for geom in geometries:
        tag = effective_tag(geom, class_count)
        if geom.kind == "point":
            px = _to_tile_px(geom.coordinates, tile)[0]
            x, y = int(np.floor(px[0])), int(np.floor(px[1]))
            if 0 <= x < TILE_SIZE and 0 <= y < TILE_SIZE:
                plane[y, x] = tag
        elif geom.kind == "linestring":
            pts = np.floor(_to_tile_px(geom.coordinates, tile)).astype(np.int64)
            for a, b in zip(pts[:-1], pts[1:]):
                _trace_segment(plane, tag, (a[0], a[1]), (b[0], b[1]))
        else:
            mask = np.zeros((TILE_SIZE, TILE_SIZE), dtype=bool)
            for rings in geom.polygons():
                poly_mask = np.zeros((TILE_SIZE, TILE_SIZE), dtype=bool)
                _fill_rings(poly_mask, [_to_tile_px(r, tile) for r in rings])
                mask |= poly_mask
            plane[mask] = tag
    return plane


# ---------------------------------------------------------------------------
# Label sets


@dataclass
class TaskSpec:
    task_name: str
    class_count: int

    def __post_init__(self):
        if self.class_count < 2:
            raise ValidationError(f"task {self.task_name!r}: class_count must be >= 2")
        if self.class_count > IGNORE:
            raise ValidationError(f"task {self.task_name!r}: class_count must be <= {IGNORE}")


@dataclass
class LabelSet:
    """Per-task geometries plus the tiles where absence means background."""

    label_set_id: str
    task_specs: list[TaskSpec]
    geometries: dict[str, list[Geometry]] = field(default_factory=dict)
    region_tiles: dict[str, set] = field(default_factory=dict)

    def __post_init__(self):
        names = [t.task_name for t in self.task_specs]
        if len(set(names)) != len(names):
            raise ValidationError("task names must be unique")
        for name in names:
            self.geometries.setdefault(name, [])
            self.region_tiles.setdefault(name, set())
        for spec in self.task_specs:
            for g in self.geometries[spec.task_name]:
                effective_tag(g, spec.class_count)

    def task(self, name: str) -> TaskSpec:
        for t in self.task_specs:
            if t.task_name == name:
                return t
        raise NotFoundError(f"unknown task {name!r} in label set {self.label_set_id!r}")

    def labeled_tiles(self) -> list[TileKey]:
        """Union of per-task regions, sorted row-major."""
        tiles = set()
        for s in self.region_tiles.values():
            tiles |= s
        return sorted((TileKey(x, y) for x, y in tiles), key=lambda t: (t.y, t.x))

    def to_json(self) -> dict:
        return {
            "label_set_id": self.label_set_id,
            "task_specs": [{"task_name": t.task_name, "class_count": t.class_count}
                           for t in self.task_specs],
            "tasks": {
                name: {
                    "geometries": [serialize_wkt(g) for g in self.geometries[name]],
                    "region_tiles": sorted([list(t) for t in self.region_tiles[name]]),
                }
                for name in self.geometries
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "LabelSet":
        specs = [TaskSpec(t["task_name"], int(t["class_count"])) for t in d["task_specs"]]
        geoms, regions = {}, {}
        for name, body in d.get("tasks", {}).items():
            geoms[name] = [parse_wkt(line)[0] for line in body.get("geometries", [])]
            regions[name] = {(int(x), int(y)) for x, y in body.get("region_tiles", [])}
        return cls(d["label_set_id"], specs, geoms, regions)


@dataclass
class LabelRaster:
    tile: TileKey
    planes: np.ndarray  # (n_tasks, 256, 256) uint8


def rasterize_label_set(label_set: LabelSet, tile: TileKey) -> LabelRaster:
    """One plane per task; tiles outside a task's region are all-IGNORE."""
    planes = np.empty((len(label_set.task_specs), TILE_SIZE, TILE_SIZE), dtype=np.uint8)
    key = (tile.x, tile.y)
    for i, spec in enumerate(label_set.task_specs):
        if key not in label_set.region_tiles[spec.task_name]:
            planes[i] = IGNORE
        else:
            planes[i] = rasterize(label_set.geometries[spec.task_name], tile, spec.class_count)
    return LabelRaster(tile, planes)


def geometry_tiles(geom: Geometry) -> list[TileKey]:
    return tiles_covering(geom.bbox())


# ---------------------------------------------------------------------------
# Persistence and labeling tasks


@dataclass
class LabelTask:
    task_id: str
    tile_list: list[TileKey]
    origin: str                      # "manual" | "active_learning"
    label_set_id: str
    status: str = "open"             # "open" | "completed"

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "tile_list": [[t.x, t.y] for t in self.tile_list],
            "origin": self.origin,
            "label_set_id": self.label_set_id,
            "status": self.status,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LabelTask":
        return cls(
            task_id=d["task_id"],
            tile_list=[TileKey(x, y) for x, y in d["tile_list"]],
            origin=d["origin"],
            label_set_id=d["label_set_id"],
            status=d["status"],
        )


class LabelManager:
    """Stores label sets and labeling tasks as JSON documents.

    Mutations are serialized by an in-process lock; the service layer keeps
    a single writing process.
    """

    def __init__(self, root: str):
        self.root = root
        os.makedirs(os.path.join(root, "tasks"), exist_ok=True)
        self._lock = threading.Lock()

    def _set_path(self, label_set_id: str) -> str:
        return os.path.join(self.root, f"{label_set_id}.json")

    def _task_path(self, task_id: str) -> str:
        return os.path.join(self.root, "tasks", f"{task_id}.json")

    def _save_set(self, ls: LabelSet) -> None:
        atomic_write(self._set_path(ls.label_set_id),
                     json.dumps(ls.to_json(), indent=2).encode("utf-8"))

    def _save_task(self, task: LabelTask) -> None:
        atomic_write(self._task_path(task.task_id),
                     json.dumps(task.to_json(), indent=2).encode("utf-8"))

    def get_label_set(self, label_set_id: str) -> LabelSet:
        path = self._set_path(label_set_id)
        if not os.path.exists(path):
            raise NotFoundError(f"unknown label set {label_set_id!r}")
        with open(path, encoding="utf-8") as f:
            return LabelSet.from_json(json.load(f))

    def list_label_sets(self) -> list[str]:
        return sorted(p[:-5] for p in os.listdir(self.root) if p.endswith(".json"))

    def ingest_wkt_files(self, label_set_id: str, task_specs: list[TaskSpec],
                         labeled_region: BBox | None,
                         paths_by_task: dict[str, str]) -> LabelSet:
        """Create a label set from one WKT file per task.

        A task's labeled region is the declared bbox (when given) plus the
        tiles its own geometries cover; tasks with no file stay unlabeled.
        """
        with self._lock:
            if os.path.exists(self._set_path(label_set_id)):
                raise ConflictError(f"label set {label_set_id!r} already exists")
            ls = LabelSet(label_set_id, task_specs)
            region = set()
            if labeled_region is not None:
                region = {(t.x, t.y) for t in tiles_covering(labeled_region)}
            for task_name, path in paths_by_task.items():
                spec = ls.task(task_name)
                with open(path, encoding="utf-8") as f:
                    geoms = parse_wkt(f.read())
                for g in geoms:
                    effective_tag(g, spec.class_count)
                ls.geometries[task_name].extend(geoms)
                tiles = set(region)
                for g in geoms:
                    tiles |= {(t.x, t.y) for t in geometry_tiles(g)}
                ls.region_tiles[task_name] |= tiles
            self._save_set(ls)
            return ls

    def ingest_wkt_file(self, path: str, label_set_id: str, task_specs: list[TaskSpec],
                        labeled_region: BBox | None, task_name: str | None = None) -> LabelSet:
        """Single-file ingest; geometries go to ``task_name`` (default: first task)."""
        target = task_name or task_specs[0].task_name
        return self.ingest_wkt_files(label_set_id, task_specs, labeled_region, {target: path})

    def clone_label_set(self, source_id: str, new_id: str) -> LabelSet:
        with self._lock:
            src = self.get_label_set(source_id)
            if os.path.exists(self._set_path(new_id)):
                raise ConflictError(f"label set {new_id!r} already exists")
            clone = LabelSet.from_json(src.to_json())
            clone.label_set_id = new_id
            self._save_set(clone)
            return clone

    # -- labeling tasks -----------------------------------------------------

    def create_labeling_task(self, tiles: list[TileKey], origin: str,
                             label_set_id: str, task_id: str | None = None) -> LabelTask:
        if not tiles:
            raise ValidationError("labeling task needs at least one tile")
        if origin not in ("manual", "active_learning"):
            raise ValidationError(f"unknown task origin {origin!r}")
        self.get_label_set(label_set_id)
        unique = sorted({(t.x, t.y) for t in tiles})
        task = LabelTask(
            task_id=task_id or f"task-{uuid.uuid4().hex[:12]}",
            tile_list=[TileKey(x, y) for x, y in unique],
            origin=origin,
            label_set_id=label_set_id,
        )
        with self._lock:
            self._save_task(task)
        return task

    def get_task(self, task_id: str) -> LabelTask:
        path = self._task_path(task_id)
        if not os.path.exists(path):
            raise NotFoundError(f"unknown labeling task {task_id!r}")
        with open(path, encoding="utf-8") as f:
            return LabelTask.from_json(json.load(f))

    def list_tasks(self) -> list[LabelTask]:
        names = sorted(p for p in os.listdir(os.path.join(self.root, "tasks"))
                       if p.endswith(".json"))
        return [self.get_task(n[:-5]) for n in names]

    def add_annotations(self, task_id: str, wkt_text: str,
                        task_name: str | None = None) -> LabelSet:
        """Append annotations, extend the labeled region, close the task."""
        with self._lock:
            task = self.get_task(task_id)
            if task.status != "open":
                raise StateError(f"labeling task {task_id!r} is {task.status}")
            ls = self.get_label_set(task.label_set_id)
            target = task_name or ls.task_specs[0].task_name
            spec = ls.task(target)
            geoms = parse_wkt(wkt_text)
            for g in geoms:
                effective_tag(g, spec.class_count)
            ls.geometries[target].extend(geoms)
            # the annotator reviewed these tiles, so absence now means
            # background for every task
            reviewed = {(t.x, t.y) for t in task.tile_list}
            for name in ls.region_tiles:
                ls.region_tiles[name] |= reviewed
            for g in geoms:
                ls.region_tiles[target] |= {(t.x, t.y) for t in geometry_tiles(g)}
            task.status = "completed"
            self._save_set(ls)
            self._save_task(task)
            return ls
