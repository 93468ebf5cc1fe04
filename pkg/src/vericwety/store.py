"""Binary embedding store: index.json + vectors.bin.

vectors.bin is row-major little-endian float32, one row per key, append-only.
index.json records the backend id, dimension, and byte extents per key.
Writes are write-once per key and serialized through a single writer; reads
are lock-free after the index is loaded. Round trips are bit-exact across
platforms.
"""
from __future__ import annotations

import json
import os
import threading
from pathlib import Path

import numpy as np

from .errors import BackendMismatch, KeyMissing, StoreError

INDEX_NAME = "index.json"
VECTORS_NAME = "vectors.bin"

_SCHEMA = "embedding-store-v1"


def _key(design_id: str, kind: str, line_no: int | None) -> tuple:
    if kind == "MODULE":
        line_no = None
    elif line_no is None:
        raise StoreError("LINE vectors need a line_no")
    return (design_id, kind, line_no)


class EmbeddingStore:
    def __init__(self, root: Path, backend_id: str, dimension: int,
                 entries: list[dict], content_hashes: dict[str, str]):
        self.root = root
        self.backend_id = backend_id
        self.dimension = dimension
        self._entries = entries  # insertion order == write order
        self._index = {_key(e["design_id"], e["kind"], e["line_no"]): e for e in entries}
        self._content_hashes = content_hashes
        self._lock = threading.Lock()
        self._bin = None
        self._dirty = False

    # --- lifecycle ---

    @classmethod
    def create(cls, root, backend_info) -> "EmbeddingStore":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        if (root / INDEX_NAME).exists():
            raise StoreError(f"store already exists at {root}")
        store = cls(root, backend_info.backend_id, backend_info.dimension, [], {})
        (root / VECTORS_NAME).write_bytes(b"")
        store._write_index()
        return store

    @classmethod
    def open(cls, root, backend_info=None) -> "EmbeddingStore":
        root = Path(root)
        index_path = root / INDEX_NAME
        if not index_path.exists():
            raise KeyMissing(f"no store at {root}")
        with open(index_path, "r", encoding="utf-8") as f:
            idx = json.load(f)
        if idx.get("schema") != _SCHEMA:
            raise StoreError(f"unknown store schema {idx.get('schema')!r}")
        store = cls(root, idx["backend_id"], idx["d"], idx["entries"],
                    idx.get("content_hashes", {}))
        if backend_info is not None and (
            backend_info.backend_id != store.backend_id
            or backend_info.dimension != store.dimension
        ):
            raise BackendMismatch(
                f"store was built with {store.backend_id} (d={store.dimension}), "
                f"requested {backend_info.backend_id} (d={backend_info.dimension})"
            )
        store._truncate_orphans()
        return store

    @classmethod
    def open_or_create(cls, root, backend_info) -> "EmbeddingStore":
        if (Path(root) / INDEX_NAME).exists():
            return cls.open(root, backend_info)
        return cls.create(root, backend_info)

    def _truncate_orphans(self):
        """Drop vector bytes written after the last flushed index entry."""
        covered = max((e["offset"] + e["length"] for e in self._entries), default=0)
        path = self.root / VECTORS_NAME
        if path.exists() and path.stat().st_size > covered:
            with open(path, "r+b") as f:
                f.truncate(covered)

    def close(self):
        self.flush()
        if self._bin is not None:
            self._bin.close()
            self._bin = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # --- writes ---

    def put(self, design_id: str, kind: str, line_no: int | None,
            vector: np.ndarray, content_hash: str | None = None) -> None:
        key = _key(design_id, kind, line_no)
        vec = np.asarray(vector, dtype="<f4")
        if vec.ndim != 1 or vec.shape[0] != self.dimension:
            raise StoreError(
                f"vector length {vec.size} does not match store d={self.dimension}"
            )
        if not np.all(np.isfinite(vec)):
            raise StoreError(f"non-finite vector for {key}")
        with self._lock:
            if key in self._index:
                raise StoreError(f"key already written: {key}")
            if self._bin is None:
                self._bin = open(self.root / VECTORS_NAME, "ab")
            offset = self._next_offset()
            data = vec.tobytes()
            self._bin.write(data)
            entry = {
                "design_id": design_id,
                "kind": key[1],
                "line_no": key[2],
                "offset": offset,
                "length": len(data),
            }
            self._entries.append(entry)
            self._index[key] = entry
            if content_hash is not None:
                self._content_hashes[design_id] = content_hash
            self._dirty = True

    def _next_offset(self) -> int:
        if not self._entries:
            return 0
        last = self._entries[-1]
        return last["offset"] + last["length"]

    def flush(self):
        with self._lock:
            if not self._dirty:
                return
            if self._bin is not None:
                self._bin.flush()
            self._write_index()
            self._dirty = False

    def _write_index(self):
        payload = {
            "schema": _SCHEMA,
            "backend_id": self.backend_id,
            "d": self.dimension,
            "entries": self._entries,
            "content_hashes": dict(sorted(self._content_hashes.items())),
        }
        tmp = self.root / (INDEX_NAME + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(payload, f, sort_keys=True)
        os.replace(tmp, self.root / INDEX_NAME)

    # --- reads ---

    def get(self, design_id: str, kind: str, line_no: int | None = None) -> np.ndarray:
        key = _key(design_id, kind, line_no)
        entry = self._index.get(key)
        if entry is None:
            raise KeyMissing(f"no vector stored for {key}")
        if self._bin is not None:
            self._bin.flush()
        with open(self.root / VECTORS_NAME, "rb") as f:
            f.seek(entry["offset"])
            data = f.read(entry["length"])
        if len(data) != entry["length"]:
            raise StoreError(f"short read for {key}; store is corrupt")
        return np.frombuffer(data, dtype="<f4").copy()

    def contains(self, design_id: str, kind: str, line_no: int | None = None) -> bool:
        return _key(design_id, kind, line_no) in self._index

    def content_hash(self, design_id: str) -> str | None:
        return self._content_hashes.get(design_id)

    def design_complete(self, design_id: str, line_count: int,
                        content_hash: str | None = None) -> bool:
        """True when the module vector and all line vectors are present.

        A recorded content hash that disagrees with the given one means the
        source changed after embedding; the write-once store cannot absorb
        that, so it is an error rather than a silent re-embed.
        """
        if not self.contains(design_id, "MODULE"):
            return False
        stored = self._content_hashes.get(design_id)
        if content_hash is not None and stored is not None and stored != content_hash:
            raise StoreError(
                f"design {design_id} changed since it was embedded; "
                "delete the store or embed into a fresh one"
            )
        return all(self.contains(design_id, "LINE", no) for no in range(1, line_count + 1))

    def keys(self):
        return list(self._index)

    def __len__(self):
        return len(self._entries)

    def design_ids(self) -> list[str]:
        return sorted({e["design_id"] for e in self._entries})
