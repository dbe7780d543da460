"""File-backed profile store: sparse per-tile channel records plus a catalog.

Layout under the store root:

    catalog.json                            profile metadata list
    <profile_id>/16/<x>/<y>.trc             non-temporal records
    <profile_id>/<date>/16/<x>/<y>.trc      temporal records

A ``.trc`` file is little-endian: magic ``TRNC``, version u16=1, tile_zoom
u8=16, reserved u8=0, tile_x u32, tile_y u32, channel_count u16, then per
channel nnz u32 followed by nnz (pixel_index u16, value f32) pairs with
strictly increasing indices.  Unlisted pixels decode to 0.0.
"""

from __future__ import annotations

import datetime
import json
import os
import re
import struct
import tempfile
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConflictError, NotFoundError, ValidationError
from .geo import TILE_SIZE, TILE_ZOOM, TileKey

TRC_MAGIC = b"TRNC"
TRC_VERSION = 1
PLANE_PIXELS = TILE_SIZE * TILE_SIZE

_HEADER = struct.Struct("<4sHBBIIH")
_PAIR_DTYPE = np.dtype([("idx", "<u2"), ("val", "<f4")])

_ID_RE = re.compile(r"^[a-z0-9_-]+$")


def _check_date(s: str) -> str:
    try:
        datetime.date.fromisoformat(s)
    except ValueError as e:
        raise ValidationError(f"bad ISO date {s!r}") from e
    return s


@dataclass
class ProfileMeta:
    """Catalog entry describing one ordered channel group."""

    profile_id: str
    name: str
    description: str
    channel_names: list[str]
    temporal: bool = False
    dates: list[str] = field(default_factory=list)
    normalization: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not _ID_RE.match(self.profile_id):
            raise ValidationError(f"profile_id {self.profile_id!r} must match [a-z0-9_-]+")
        if not self.channel_names:
            raise ValidationError("profile needs at least one channel")
        if not self.normalization:
            self.normalization = [{"mean": 0.0, "std": 1.0} for _ in self.channel_names]
        if len(self.normalization) != len(self.channel_names):
            raise ValidationError("normalization entries must match channel count")
        for n in self.normalization:
            if float(n["std"]) <= 0.0:
                raise ValidationError("normalization std must be > 0")
        if self.temporal and not self.dates:
            raise ValidationError("temporal profile needs a date list")
        if not self.temporal and self.dates:
            raise ValidationError("non-temporal profile must not carry dates")
        for d in self.dates:
            _check_date(d)
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise ValidationError("dates must be strictly increasing")

    @property
    def channel_count(self) -> int:
        return len(self.channel_names)

    def to_json(self) -> dict:
        return {
            "profile_id": self.profile_id,
            "name": self.name,
            "description": self.description,
            "channel_names": list(self.channel_names),
            "channel_count": self.channel_count,
            "temporal": self.temporal,
            "dates": list(self.dates),
            "normalization": [{"mean": float(n["mean"]), "std": float(n["std"])}
                              for n in self.normalization],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ProfileMeta":
        meta = cls(
            profile_id=d["profile_id"],
            name=d.get("name", d["profile_id"]),
            description=d.get("description", ""),
            channel_names=list(d["channel_names"]),
            temporal=bool(d.get("temporal", False)),
            dates=list(d.get("dates", [])),
            normalization=[dict(n) for n in d.get("normalization", [])],
        )
        if "channel_count" in d and int(d["channel_count"]) != meta.channel_count:
            raise ValidationError(f"channel_count mismatch in profile {meta.profile_id!r}")
        return meta


@dataclass
class SparseTileRecord:
    """Per-tile sparse channels: (indices, values) arrays per channel."""

    tile: TileKey
    channels: list[tuple[np.ndarray, np.ndarray]]

    def validate(self) -> None:
        for k, (idx, val) in enumerate(self.channels):
            idx = np.asarray(idx)
            val = np.asarray(val)
            if idx.shape != val.shape or idx.ndim != 1:
                raise ValidationError(f"channel {k}: index/value arrays must be 1-d and equal length")
            if idx.size:
                if idx.min() < 0 or idx.max() >= PLANE_PIXELS:
                    raise ValidationError(f"channel {k}: pixel index out of [0, {PLANE_PIXELS})")
                if np.any(np.diff(idx.astype(np.int64)) <= 0):
                    raise ValidationError(f"channel {k}: pixel indices must be strictly increasing")
                if not np.all(np.isfinite(val)):
                    raise ValidationError(f"channel {k}: values must be finite")

    @classmethod
    def from_planes(cls, tile: TileKey, planes) -> "SparseTileRecord":
        """Build a record from dense planes, dropping exact zeros."""
        channels = []
        for plane in planes:
            flat = np.asarray(plane, dtype=np.float32).reshape(-1)
            if flat.size != PLANE_PIXELS:
                raise ValidationError("plane must be 256x256")
            idx = np.flatnonzero(flat)
            channels.append((idx.astype(np.uint16), flat[idx]))
        return cls(tile, channels)

    def to_planes(self) -> list[np.ndarray]:
        """Dense 256x256 float32 planes; unlisted pixels are 0.0."""
        out = []
        for idx, val in self.channels:
            plane = np.zeros(PLANE_PIXELS, dtype=np.float32)
            plane[np.asarray(idx, dtype=np.int64)] = np.asarray(val, dtype=np.float32)
            out.append(plane.reshape(TILE_SIZE, TILE_SIZE))
        return out


def encode_trc(record: SparseTileRecord) -> bytes:
    record.validate()
    parts = [_HEADER.pack(TRC_MAGIC, TRC_VERSION, TILE_ZOOM, 0,
                          record.tile.x, record.tile.y, len(record.channels))]
    for idx, val in record.channels:
        pairs = np.empty(len(idx), dtype=_PAIR_DTYPE)
        pairs["idx"] = np.asarray(idx, dtype=np.uint16)
        pairs["val"] = np.asarray(val, dtype=np.float32)
        parts.append(struct.pack("<I", len(idx)))
        parts.append(pairs.tobytes())
    return b"".join(parts)


def decode_trc(data: bytes) -> SparseTileRecord:
    if len(data) < _HEADER.size:
        raise ValidationError("truncated .trc file")
    magic, version, zoom, _, x, y, nch = _HEADER.unpack_from(data, 0)
    if magic != TRC_MAGIC:
        raise ValidationError("bad .trc magic")
    if version != TRC_VERSION:
        raise ValidationError(f"unsupported .trc version {version}")
    if zoom != TILE_ZOOM:
        raise ValidationError(f"unsupported tile zoom {zoom}")
    off = _HEADER.size
    channels = []
    for _ in range(nch):
        (nnz,) = struct.unpack_from("<I", data, off)
        off += 4
        pairs = np.frombuffer(data, dtype=_PAIR_DTYPE, count=nnz, offset=off)
        off += nnz * _PAIR_DTYPE.itemsize
        channels.append((pairs["idx"].copy(), pairs["val"].copy()))
    if off != len(data):
        raise ValidationError("trailing bytes in .trc file")
    record = SparseTileRecord(TileKey(x, y), channels)
    record.validate()
    return record


def atomic_write(path: str, data: bytes) -> None:
    """Write-temp-then-rename so readers never observe partial files."""
    os.makedirs(os.path.dirname(path), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ChannelStore:
    """Profile catalog plus sparse tile records under one root directory.

    Reads go straight to the filesystem, so separately created store
    instances over the same root (CLI ingest, then server) stay coherent.
    Catalog writes are serialized by an in-process lock; the service layer
    guarantees there is a single writing process.
    """

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self._catalog_lock = threading.Lock()

    # -- catalog ------------------------------------------------------------

    @property
    def catalog_path(self) -> str:
        return os.path.join(self.root, "catalog.json")

    def _load_catalog(self) -> list[ProfileMeta]:
        if not os.path.exists(self.catalog_path):
            return []
        with open(self.catalog_path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        metas = [ProfileMeta.from_json(d) for d in raw]
        ids = [m.profile_id for m in metas]
        if len(set(ids)) != len(ids):
            raise ValidationError("catalog contains duplicate profile ids")
        return metas

    def _save_catalog(self, metas: list[ProfileMeta]) -> None:
        payload = json.dumps([m.to_json() for m in metas], indent=2).encode("utf-8")
        atomic_write(self.catalog_path, payload)

    def register_profile(self, meta: ProfileMeta) -> str:
        with self._catalog_lock:
            metas = self._load_catalog()
            if any(m.profile_id == meta.profile_id for m in metas):
                raise ConflictError(f"profile {meta.profile_id!r} already registered")
            metas.append(meta)
            self._save_catalog(metas)
        return meta.profile_id

    def list_profiles(self) -> list[ProfileMeta]:
        return sorted(self._load_catalog(), key=lambda m: m.profile_id)

    def get_profile(self, profile_id: str) -> ProfileMeta:
        for m in self._load_catalog():
            if m.profile_id == profile_id:
                return m
        raise NotFoundError(f"unknown profile {profile_id!r}")

    # -- tile records -------------------------------------------------------

    def tile_path(self, profile_id: str, tile: TileKey, date: str | None = None) -> str:
        parts = [self.root, profile_id]
        if date is not None:
            parts.append(date)
        parts += [str(TILE_ZOOM), str(tile.x), f"{tile.y}.trc"]
        return os.path.join(*parts)

    def put_tile(self, profile_id: str, record: SparseTileRecord, date: str | None = None) -> None:
        meta = self.get_profile(profile_id)
        if len(record.channels) != meta.channel_count:
            raise ValidationError(
                f"record has {len(record.channels)} channels, profile "
                f"{profile_id!r} expects {meta.channel_count}")
        if meta.temporal:
            if date is None:
                raise ValidationError(f"temporal profile {profile_id!r} requires a date")
            if date not in meta.dates:
                raise ValidationError(f"date {date!r} not in profile {profile_id!r} dates")
        elif date is not None:
            raise ValidationError(f"profile {profile_id!r} is not temporal")
        atomic_write(self.tile_path(profile_id, record.tile, date), encode_trc(record))

    def get_tile(self, profile_id: str, tile: TileKey, date: str | None = None) -> list[np.ndarray]:
        """Dense planes in catalog channel order; absent records are zeros."""
        meta = self.get_profile(profile_id)
        path = self.tile_path(profile_id, tile, date)
        if not os.path.exists(path):
            return [np.zeros((TILE_SIZE, TILE_SIZE), dtype=np.float32)
                    for _ in range(meta.channel_count)]
        with open(path, "rb") as f:
            record = decode_trc(f.read())
        if (record.tile.x, record.tile.y) != (tile.x, tile.y):
            raise ValidationError(f"tile key mismatch in {path}")
        if len(record.channels) != meta.channel_count:
            raise ValidationError(f"channel count mismatch in {path}")
        return record.to_planes()

    def aggregate_range(self, profile_id: str, tile: TileKey,
                        date_from: str, date_to: str) -> list[np.ndarray]:
        """Element-wise sum over the stored dates inside [date_from, date_to].

        Accumulates in float64 over dates in sorted order, then casts to
        float32, so the result is independent of how the range is split.
        """
        meta = self.get_profile(profile_id)
        if not meta.temporal:
            raise ValidationError(f"profile {profile_id!r} is not temporal")
        _check_date(date_from), _check_date(date_to)
        if date_from > date_to:
            raise ValidationError("date_from must be <= date_to")
        acc = [np.zeros((TILE_SIZE, TILE_SIZE), dtype=np.float64)
               for _ in range(meta.channel_count)]
        for date in meta.dates:
            if date_from <= date <= date_to:
                for k, plane in enumerate(self.get_tile(profile_id, tile, date)):
                    acc[k] += plane.astype(np.float64)
        return [a.astype(np.float32) for a in acc]

    # -- prediction feedback ------------------------------------------------

    def ingest_prediction_planes(self, new_profile_id: str, name: str,
                                 task_specs: list[tuple[str, int]],
                                 tiles: dict[TileKey, np.ndarray],
                                 description: str = "") -> str:
        """Register per-pixel confidences as a new non-temporal profile.

        ``tiles`` maps each tile to a (sum(class counts), 256, 256) stack in
        task-major, class-major order; channels are named <task>/class<k>.
        """
        names = [f"{task}/class{c}" for task, count in task_specs for c in range(count)]
        meta = ProfileMeta(
            profile_id=new_profile_id, name=name, description=description,
            channel_names=names,
            normalization=[{"mean": 0.0, "std": 1.0} for _ in names])
        self.register_profile(meta)
        for tile, stack in sorted(tiles.items()):
            if stack.shape != (len(names), TILE_SIZE, TILE_SIZE):
                raise ValidationError(f"confidence stack for {tile} has shape {stack.shape}")
            self.put_tile(new_profile_id, SparseTileRecord.from_planes(tile, stack))
        return new_profile_id
