"""File-backed metadata store: one JSON document per entity, an
append-only audit log, and persisted id counters.

All writes go through one in-process lock (the service keeps a single
writing process) and land via temp-write-rename, so a crash leaves every
document either old or new, never torn.
"""

from __future__ import annotations

import json
import os
import threading

from ..errors import NotFoundError
from ..store import atomic_write

KINDS = ("projects", "experiments", "jobs", "rounds")


class MetaStore:
    def __init__(self, root: str):
        self.root = root
        self.lock = threading.RLock()
        for kind in KINDS:
            os.makedirs(os.path.join(root, kind), exist_ok=True)

    def _path(self, kind: str, doc_id: str) -> str:
        return os.path.join(self.root, kind, f"{doc_id}.json")

    def save(self, kind: str, doc_id: str, doc: dict) -> None:
        with self.lock:
            atomic_write(self._path(kind, doc_id),
                         json.dumps(doc, indent=2).encode("utf-8"))

    def load(self, kind: str, doc_id: str) -> dict:
        path = self._path(kind, doc_id)
        with self.lock:
            if not os.path.exists(path):
                raise NotFoundError(f"unknown {kind[:-1]} {doc_id!r}")
            with open(path, encoding="utf-8") as f:
                return json.load(f)

    def exists(self, kind: str, doc_id: str) -> bool:
        return os.path.exists(self._path(kind, doc_id))

    def list_ids(self, kind: str) -> list:
        with self.lock:
            names = os.listdir(os.path.join(self.root, kind))
        return sorted(n[:-5] for n in names if n.endswith(".json"))

    def list_docs(self, kind: str) -> list:
        return [self.load(kind, i) for i in self.list_ids(kind)]

    def next_id(self, kind: str, prefix: str) -> str:
        with self.lock:
            path = os.path.join(self.root, "counters.json")
            counters = {}
            if os.path.exists(path):
                with open(path, encoding="utf-8") as f:
                    counters = json.load(f)
            n = counters.get(kind, 0) + 1
            counters[kind] = n
            atomic_write(path, json.dumps(counters).encode("utf-8"))
            return f"{prefix}_{n:04d}"

    def audit(self, entry: dict) -> None:
        with self.lock:
            line = json.dumps(entry) + "\n"
            with open(os.path.join(self.root, "audit.log"), "a",
                      encoding="utf-8") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())

    def read_audit(self) -> list:
        path = os.path.join(self.root, "audit.log")
        if not os.path.exists(path):
            return []
        with self.lock:
            with open(path, encoding="utf-8") as f:
                return [json.loads(line) for line in f if line.strip()]
