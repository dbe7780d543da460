"""Data-parallel tile prediction producing per-class confidence heatmaps.

A region's tiles are partitioned across a worker pool; each worker
assembles the tile input exactly as dataset assembly does, runs the
model, and writes one heatmap file. Per-tile outputs depend only on the
tile, so results are byte-identical for any worker count.
"""

from __future__ import annotations

import multiprocessing
import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .dataprep import assemble_tile_image
from .errors import ValidationError
from .geo import BBox, TILE_SIZE, TileKey, tiles_covering
from .kernel import load_checkpoint
from .kernel.losses import softmax
from .kernel.model import forward
from .store import ChannelStore, atomic_write

TRHM_MAGIC = b"TRHM"
TRHM_VERSION = 1
_HM_HEADER = struct.Struct("<4sHIIH")     # magic, version, tile_x, tile_y, task_count


@dataclass
class Heatmap:
    tile: TileKey
    task_names: list
    confidences: list                      # per task: (class_count, 256, 256) f32

    def validate(self) -> None:
        if len(self.task_names) != len(self.confidences):
            raise ValidationError("task name/confidence count mismatch")
        for name, conf in zip(self.task_names, self.confidences):
            if conf.shape[1:] != (TILE_SIZE, TILE_SIZE):
                raise ValidationError(f"task {name!r}: bad confidence shape")
            sums = conf.sum(axis=0)
            if np.abs(sums - 1.0).max() > 1e-5:
                raise ValidationError(
                    f"task {name!r}: class confidences do not sum to 1")

    def task_index(self, task: str) -> int:
        try:
            return self.task_names.index(task)
        except ValueError:
            raise ValidationError(f"unknown task {task!r}") from None


def encode_heatmap(hm: Heatmap) -> bytes:
    chunks = [_HM_HEADER.pack(TRHM_MAGIC, TRHM_VERSION, hm.tile.x, hm.tile.y,
                              len(hm.confidences))]
    for conf in hm.confidences:
        chunks.append(struct.pack("<H", conf.shape[0]))
    for conf in hm.confidences:
        chunks.append(np.ascontiguousarray(conf, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_heatmap(data: bytes, task_names: list | None = None) -> Heatmap:
    magic, version, tx, ty, task_count = _HM_HEADER.unpack_from(data, 0)
    if magic != TRHM_MAGIC:
        raise ValidationError(f"bad heatmap magic {magic!r}")
    if version != TRHM_VERSION:
        raise ValidationError(f"unsupported heatmap version {version}")
    offset = _HM_HEADER.size
    counts = []
    for _ in range(task_count):
        counts.append(struct.unpack_from("<H", data, offset)[0])
        offset += 2
    confidences = []
    for k in counts:
        n = k * TILE_SIZE * TILE_SIZE * 4
        arr = np.frombuffer(data[offset:offset + n], dtype="<f4")
        if arr.size != k * TILE_SIZE * TILE_SIZE:
            raise ValidationError("truncated heatmap payload")
        confidences.append(arr.reshape(k, TILE_SIZE, TILE_SIZE).copy())
        offset += n
    if offset != len(data):
        raise ValidationError("trailing bytes in heatmap file")
    names = task_names or [f"task{i}" for i in range(task_count)]
    if len(names) != task_count:
        raise ValidationError("task name count does not match heatmap")
    return Heatmap(TileKey(tx, ty), list(names), confidences)


def heatmap_path(out_dir: str, tile: TileKey) -> str:
    return os.path.join(out_dir, f"{tile.x}_{tile.y}.trhm")


def read_heatmap(path: str, task_names: list | None = None) -> Heatmap:
    with open(path, "rb") as f:
        return decode_heatmap(f.read(), task_names)


# ---------------------------------------------------------------------------
# Prediction


def predict_tile(store: ChannelStore, manifest: dict, ckpt, tile: TileKey,
                 date_override: dict | None = None) -> Heatmap:
    image = assemble_tile_image(store, manifest, tile, date_override)
    logits = forward(ckpt.spec, ckpt.params, image)
    names = [n for n, _ in ckpt.spec.tasks]
    return Heatmap(tile, names, [softmax(logits[n]) for n in names])


def _check_compatible(manifest: dict, spec) -> None:
    if spec.in_channels != manifest["C"]:
        raise ValidationError(
            f"checkpoint expects {spec.in_channels} channels, "
            f"manifest has {manifest['C']}")
    manifest_tasks = tuple((t["task_name"], t["class_count"])
                           for t in manifest["tasks"])
    if tuple(spec.tasks) != manifest_tasks:
        raise ValidationError("checkpoint tasks do not match the manifest")


_worker_ctx = {}


def _init_worker(store_root, manifest, checkpoint_path, out_dir, date_override):
    _worker_ctx["store"] = ChannelStore(store_root)
    _worker_ctx["manifest"] = manifest
    _worker_ctx["ckpt"] = load_checkpoint(checkpoint_path)
    _worker_ctx["out_dir"] = out_dir
    _worker_ctx["date_override"] = date_override


def _predict_one(tile_xy) -> str:
    tile = TileKey(*tile_xy)
    hm = predict_tile(_worker_ctx["store"], _worker_ctx["manifest"],
                      _worker_ctx["ckpt"], tile, _worker_ctx["date_override"])
    path = heatmap_path(_worker_ctx["out_dir"], tile)
    atomic_write(path, encode_heatmap(hm))
    return path


def predict_region(store_root: str, manifest: dict, checkpoint_path: str,
                   region: BBox, out_dir: str, workers: int = 1,
                   date_override: dict | None = None) -> list:
    """Predict every tile covering the region; returns heatmap file paths.

    Fails before any work on a channel/task mismatch; on a worker failure
    the partial outputs are removed and the error re-raised.
    """
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    ckpt = load_checkpoint(checkpoint_path)
    _check_compatible(manifest, ckpt.spec)
    tiles = tiles_covering(region)
    os.makedirs(out_dir, exist_ok=True)
    keys = [(t.x, t.y) for t in tiles]
    try:
        if workers == 1:
            _init_worker(store_root, manifest, checkpoint_path, out_dir, date_override)
            paths = [_predict_one(k) for k in keys]
        else:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(workers, initializer=_init_worker,
                          initargs=(store_root, manifest, checkpoint_path,
                                    out_dir, date_override)) as pool:
                paths = pool.map(_predict_one, keys)
        missing = [p for p in (heatmap_path(out_dir, t) for t in tiles)
                   if not os.path.exists(p)]
        if missing:
            raise ValidationError(f"prediction incomplete: {len(missing)} tiles missing")
    except Exception:
        for t in tiles:
            p = heatmap_path(out_dir, t)
            if os.path.exists(p):
                os.remove(p)
        raise
    return paths


# ---------------------------------------------------------------------------
# Rendering


def render_heatmap_png(hm: Heatmap, task: str, class_index: int, path: str) -> None:
    """8-bit grayscale confidence render, value = round(255 * confidence)."""
    conf = hm.confidences[hm.task_index(task)]
    if not 0 <= class_index < conf.shape[0]:
        raise ValidationError(f"class index {class_index} out of range")
    # round half up
    gray = np.floor(conf[class_index] * 255.0 + 0.5).astype(np.uint8)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    Image.fromarray(gray, mode="L").save(path)


def dominant_class_render(hm: Heatmap, task: str, palette: list, path: str) -> None:
    """Argmax class per pixel through the palette, ties to the lowest index."""
    conf = hm.confidences[hm.task_index(task)]
    if len(palette) != conf.shape[0]:
        raise ValidationError(
            f"palette has {len(palette)} colors for {conf.shape[0]} classes")
    winner = conf.argmax(axis=0)
    rgb = np.array(palette, dtype=np.uint8)[winner]
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    Image.fromarray(rgb, mode="RGB").save(path)


def viz_path(base: str, task: str, class_index: int, tile: TileKey) -> str:
    """Slippy-map layout: <base>/viz/<task>/<class>/16/<x>/<y>.png"""
    return os.path.join(base, "viz", task, str(class_index), "16",
                        str(tile.x), f"{tile.y}.png")
