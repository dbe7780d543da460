"""Dataset assembly: channel stacking, normalization, hold-out split.

An example is one tile: a C x 256 x 256 float32 image whose rows follow
profile-catalog order (temporal profiles collapsed over their date range),
plus the per-task label planes. Output ordering is fixed by sorted tile
keys no matter how assembly is scheduled.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geo import TILE_SIZE, TileKey
from .kernel.rng import Lcg
from .labels import LabelManager, LabelRaster, rasterize_label_set
from .store import ChannelStore, atomic_write, decode_trc

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class DatasetSpec:
    profile_ids: tuple
    label_set_id: str
    date_range: dict | None = None      # profile_id -> (start, end), temporal only
    transient_dir: str | None = None
    val_fraction: float = 0.30
    split_seed: int = 0

    def __post_init__(self):
        if not self.profile_ids:
            raise ValidationError("dataset needs at least one profile")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValidationError("val_fraction must be in (0, 1)")

    def to_json(self) -> dict:
        return {
            "profile_ids": list(self.profile_ids),
            "label_set_id": self.label_set_id,
            "date_range": ({k: list(v) for k, v in self.date_range.items()}
                           if self.date_range else None),
            "transient_dir": self.transient_dir,
            "val_fraction": self.val_fraction,
            "split_seed": self.split_seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetSpec":
        return cls(
            profile_ids=tuple(d["profile_ids"]),
            label_set_id=d["label_set_id"],
            date_range=({k: tuple(v) for k, v in d["date_range"].items()}
                        if d.get("date_range") else None),
            transient_dir=d.get("transient_dir"),
            val_fraction=float(d.get("val_fraction", 0.30)),
            split_seed=int(d.get("split_seed", 0)),
        )


@dataclass
class Example:
    tile: TileKey
    image: np.ndarray           # (C, 256, 256) float32
    labels: LabelRaster


def normalize(plane: np.ndarray, mean: float, std: float) -> np.ndarray:
    if std <= 0:
        raise ValidationError("normalization std must be > 0")
    return ((plane - mean) / std).astype(np.float32)


def split_train_val(tiles: list[TileKey], val_fraction: float, seed: int):
    """Seeded Fisher-Yates shuffle; val = round(n * fraction), min 1 for n >= 2."""
    if not tiles:
        raise ValidationError("cannot split an empty tile list")
    order = list(tiles)
    Lcg(seed).shuffle(order)
    n = len(order)
    n_val = int(np.floor(n * val_fraction + 0.5))
    if n >= 2:
        n_val = max(n_val, 1)
    n_val = min(n_val, n - 1)   # training set must stay non-empty
    val = sorted(order[:n_val], key=lambda t: (t.y, t.x))
    train = sorted(order[n_val:], key=lambda t: (t.y, t.x))
    return train, val


def _transient_path(transient_dir: str, tile: TileKey) -> str:
    return os.path.join(transient_dir, f"{tile.x}_{tile.y}.trc")


def _load_transient_stats(transient_dir: str, channel_count: int):
    """Optional stats.json: {"channel_names": [...], "mean": [...], "std": [...]}.

    Without it transient channels pass through unscaled.
    """
    path = os.path.join(transient_dir, "stats.json")
    names = [f"transient{i}" for i in range(channel_count)]
    norms = [{"mean": 0.0, "std": 1.0} for _ in range(channel_count)]
    if os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            stats = json.load(f)
        if stats.get("channel_names"):
            if len(stats["channel_names"]) != channel_count:
                raise ValidationError("transient stats channel_names count mismatch")
            names = list(stats["channel_names"])
        if "mean" in stats:
            means = stats["mean"]
            stds = stats.get("std", [1.0] * channel_count)
            if len(means) != channel_count or len(stds) != channel_count:
                raise ValidationError("transient stats mean/std count mismatch")
            norms = [{"mean": float(m), "std": float(s)} for m, s in zip(means, stds)]
    return names, norms


def inject_transient(examples: list[Example], manifest: dict, transient_dir: str):
    """Append transient channels; every dataset tile must have a `.trc` file."""
    count = None
    records = {}
    for ex in examples:
        path = _transient_path(transient_dir, ex.tile)
        if not os.path.exists(path):
            raise ValidationError(
                f"transient data missing for tile {ex.tile.x}/{ex.tile.y}")
        with open(path, "rb") as f:
            rec = decode_trc(f.read())
        if (rec.tile.x, rec.tile.y) != (ex.tile.x, ex.tile.y):
            raise ValidationError(
                f"transient file {path} holds tile {rec.tile.x}/{rec.tile.y}")
        if count is None:
            count = len(rec.channels)
        elif len(rec.channels) != count:
            raise ValidationError("transient channel count differs between tiles")
        records[(ex.tile.x, ex.tile.y)] = rec
    names, norms = _load_transient_stats(transient_dir, count)
    for ex in examples:
        planes = records[(ex.tile.x, ex.tile.y)].to_planes()
        extra = np.stack([normalize(p, n["mean"], n["std"])
                          for p, n in zip(planes, norms)])
        ex.image = np.concatenate([ex.image, extra], axis=0)
    manifest["C"] += count
    manifest["channel_names"] += names
    manifest["normalization"] += norms
    return examples, manifest


def build_dataset(store: ChannelStore, labels: LabelManager, spec: DatasetSpec,
                  out_dir: str | None = None):
    """Assemble (train, val, manifest) and optionally persist to out_dir."""
    label_set = labels.get_label_set(spec.label_set_id)
    profiles = [store.get_profile(pid) for pid in spec.profile_ids]
    for meta in profiles:
        given = spec.date_range or {}
        if meta.temporal and meta.profile_id not in given:
            raise ValidationError(
                f"temporal profile {meta.profile_id!r} needs a date_range")
        if not meta.temporal and meta.profile_id in given:
            raise ValidationError(
                f"profile {meta.profile_id!r} is not temporal; date_range not allowed")

    channel_names, norms = [], []
    for meta in profiles:
        channel_names += [f"{meta.profile_id}/{n}" for n in meta.channel_names]
        norms += [dict(n) for n in meta.normalization]

    tiles = label_set.labeled_tiles()
    if not tiles:
        raise ValidationError(f"label set {spec.label_set_id!r} has no labeled tiles")

    examples = []
    for tile in tiles:
        planes = []
        for meta in profiles:
            if meta.temporal:
                start, end = spec.date_range[meta.profile_id]
                raw = store.aggregate_range(meta.profile_id, tile, start, end)
            else:
                raw = store.get_tile(meta.profile_id, tile)
            planes.extend(raw)
        image = np.stack([normalize(p, n["mean"], n["std"])
                          for p, n in zip(planes, norms)])
        examples.append(Example(tile, image, rasterize_label_set(label_set, tile)))

    manifest = {
        "C": len(channel_names),
        "channel_names": list(channel_names),
        "normalization": [dict(n) for n in norms],
        "label_set_id": spec.label_set_id,
        "tasks": [{"task_name": t.task_name, "class_count": t.class_count}
                  for t in label_set.task_specs],
        "spec": spec.to_json(),
    }
    if spec.transient_dir:
        examples, manifest = inject_transient(examples, manifest, spec.transient_dir)

    train_tiles, val_tiles = split_train_val(tiles, spec.val_fraction, spec.split_seed)
    manifest["train_tiles"] = [[t.x, t.y] for t in train_tiles]
    manifest["val_tiles"] = [[t.x, t.y] for t in val_tiles]
    by_key = {(e.tile.x, e.tile.y): e for e in examples}
    train = [by_key[(t.x, t.y)] for t in train_tiles]
    val = [by_key[(t.x, t.y)] for t in val_tiles]

    if out_dir is not None:
        save_dataset(out_dir, train, val, manifest)
    return train, val, manifest


def assemble_tile_image(store: ChannelStore, manifest: dict, tile: TileKey,
                        date_override: dict | None = None,
                        missing_transient_ok: bool = True) -> np.ndarray:
    """Rebuild one tile's input image from a finished manifest.

    Prediction-time counterpart of build_dataset's stacking: same profile
    order, same normalization constants, optional per-profile date range
    override. Transient channels come from the recorded directory; absent
    files become zero planes when missing_transient_ok (training assembly
    instead refuses them).
    """
    spec = DatasetSpec.from_json(manifest["spec"])
    date_range = dict(spec.date_range or {})
    if date_override:
        for pid in date_override:
            if pid not in spec.profile_ids:
                raise ValidationError(f"date override for unknown profile {pid!r}")
            if not store.get_profile(pid).temporal:
                raise ValidationError(f"profile {pid!r} is not temporal")
        date_range.update(date_override)

    norms = manifest["normalization"]
    planes = []
    for pid in spec.profile_ids:
        meta = store.get_profile(pid)
        if meta.temporal:
            start, end = date_range[pid]
            raw = store.aggregate_range(pid, tile, start, end)
        else:
            raw = store.get_tile(pid, tile)
        planes.extend(raw)
    if spec.transient_dir:
        count = manifest["C"] - len(planes)
        path = _transient_path(spec.transient_dir, tile)
        if os.path.exists(path):
            with open(path, "rb") as f:
                rec = decode_trc(f.read())
            if len(rec.channels) != count:
                raise ValidationError(
                    f"transient file for {tile.x}/{tile.y} has "
                    f"{len(rec.channels)} channels, manifest expects {count}")
            planes.extend(rec.to_planes())
        elif missing_transient_ok:
            planes.extend(np.zeros((TILE_SIZE, TILE_SIZE), dtype=np.float32)
                          for _ in range(count))
        else:
            raise ValidationError(
                f"transient data missing for tile {tile.x}/{tile.y}")
    if len(planes) != manifest["C"]:
        raise ValidationError(
            f"assembled {len(planes)} channels, manifest expects {manifest['C']}")
    return np.stack([normalize(p, n["mean"], n["std"])
                     for p, n in zip(planes, norms)])


# ---------------------------------------------------------------------------
# On-disk form: per-tile flat binary (C f32 planes, then per-task u8 planes)


def _example_bytes(ex: Example) -> bytes:
    img = np.ascontiguousarray(ex.image, dtype="<f4")
    lab = np.ascontiguousarray(ex.labels.planes, dtype=np.uint8)
    return img.tobytes() + lab.tobytes()


def _example_from_bytes(data: bytes, tile: TileKey, c: int, n_tasks: int) -> Example:
    img_len = c * TILE_SIZE * TILE_SIZE * 4
    lab_len = n_tasks * TILE_SIZE * TILE_SIZE
    if len(data) != img_len + lab_len:
        raise ValidationError(f"example file for {tile.x}/{tile.y} has wrong size")
    image = np.frombuffer(data[:img_len], dtype="<f4").reshape(c, TILE_SIZE, TILE_SIZE)
    planes = np.frombuffer(data[img_len:], dtype=np.uint8).reshape(
        n_tasks, TILE_SIZE, TILE_SIZE)
    return Example(tile, image.copy(), LabelRaster(tile, planes.copy()))


def save_dataset(out_dir: str, train: list[Example], val: list[Example],
                 manifest: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for ex in train + val:
        atomic_write(os.path.join(out_dir, f"{ex.tile.x}_{ex.tile.y}.bin"),
                     _example_bytes(ex))
    atomic_write(os.path.join(out_dir, MANIFEST_NAME),
                 json.dumps(manifest, indent=2).encode("utf-8"))


def load_dataset(out_dir: str):
    with open(os.path.join(out_dir, MANIFEST_NAME), encoding="utf-8") as f:
        manifest = json.load(f)
    c = manifest["C"]
    n_tasks = len(manifest["tasks"])

    def load_split(tile_rows):
        out = []
        for x, y in tile_rows:
            tile = TileKey(x, y)
            with open(os.path.join(out_dir, f"{x}_{y}.bin"), "rb") as f:
                out.append(_example_from_bytes(f.read(), tile, c, n_tasks))
        return out

    return load_split(manifest["train_tiles"]), load_split(manifest["val_tiles"]), manifest
