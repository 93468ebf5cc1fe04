"""Module- and line-level embeddings via pluggable backends.

Two backends ship: a deterministic hashed character n-gram featurizer for
offline use, and a thin HTTP adapter for any service exposing pooled hidden
states of a code LLM. Line features are the fixed-order concatenation
line-embedding || module-embedding (length 2d).
"""
from __future__ import annotations

import hashlib
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import requests

from .corpus import DesignUnit, text_sha256
from .errors import BackendUnavailable, DesignMismatch, DimensionMismatch
from .store import EmbeddingStore

log = logging.getLogger(__name__)

MODULE = "MODULE"
LINE = "LINE"


@dataclass(frozen=True)
class EmbeddingBackendInfo:
    backend_id: str
    dimension: int
    deterministic: bool


@dataclass
class EmbeddingVector:
    values: np.ndarray
    kind: str  # MODULE or LINE
    design_id: str
    line_no: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if not np.all(np.isfinite(self.values)):
            raise DimensionMismatch(f"non-finite embedding for {self.design_id}")


@dataclass
class LineFeature:
    values: np.ndarray  # line || module, length 2d
    design_id: str
    line_no: int


def _bucket(gram: str, d: int) -> int:
    h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") % d

def _sign(gram: str) -> float:
    h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=b"sign").digest()
    return 1.0 if h[0] & 1 == 0 else -1.0


def fallback_embed(text: str, d: int = 256, n: int = 3) -> np.ndarray:
    """Signed-hash character n-gram counts into d buckets, L2-normalized.

    Whitespace-only text maps to the zero vector; anything else comes back
    with unit norm. Texts shorter than n contribute themselves as one gram.
    Pure function of (text, d, n): bit-identical across runs and platforms.
    """
    if d < 16:
        raise ValueError(f"dimension must be >= 16, got {d}")
    if not 2 <= n <= 5:
        raise ValueError(f"n-gram size must be in [2, 5], got {n}")
    vec = np.zeros(d, dtype=np.float64)
    if text.strip() == "":
        return vec.astype(np.float32)
    if len(text) >= n:
        grams = Counter(text[i:i + n] for i in range(len(text) - n + 1))
    else:
        grams = Counter({text: 1})
    for gram, count in grams.items():
        vec[_bucket(gram, d)] += _sign(gram) * count
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        # signed buckets cancelled exactly; keep the unit-norm contract
        vec[_bucket(text, d)] = 1.0
        norm = 1.0
    return (vec / norm).astype(np.float32)


class FallbackEmbedder:
    """Deterministic offline stand-in for an LLM embedding service."""

    def __init__(self, dimension: int = 256, ngram: int = 3):
        self.info = EmbeddingBackendInfo(
            backend_id=f"fallback-ngram{ngram}-d{dimension}",
            dimension=dimension,
            deterministic=True,
        )
        self.ngram = ngram

    def embed(self, text: str) -> np.ndarray:
        return fallback_embed(text, self.info.dimension, self.ngram)


class RemoteEmbedder:
    """HTTP adapter: POST {"text": ...} -> {"embedding": [floats]}."""

    def __init__(
        self,
        base_url: str,
        dimension: int,
        backend_id: str = "remote",
        api_key_env_var: str = "",
        timeout_s: float = 120.0,
        session: requests.Session | None = None,
    ):
        self.info = EmbeddingBackendInfo(
            backend_id=backend_id, dimension=dimension, deterministic=False
        )
        self.base_url = base_url.rstrip("/")
        self.api_key_env_var = api_key_env_var
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def embed(self, text: str) -> np.ndarray:
        import os

        headers = {"Content-Type": "application/json"}
        if self.api_key_env_var:
            key = os.environ.get(self.api_key_env_var, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._session.post(
                f"{self.base_url}/embed",
                json={"text": text},
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise BackendUnavailable(f"embedding backend unreachable: {exc}")
        if resp.status_code >= 400:
            raise BackendUnavailable(f"embedding backend returned HTTP {resp.status_code}")
        try:
            values = resp.json()["embedding"]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendUnavailable(f"embedding backend returned unexpected body: {exc}")
        arr = np.asarray(values, dtype=np.float32)
        if arr.ndim != 1 or arr.shape[0] != self.info.dimension:
            raise DimensionMismatch(
                f"backend returned {arr.shape} values, expected ({self.info.dimension},)"
            )
        return arr


def _checked(backend, text: str) -> np.ndarray:
    vec = np.asarray(backend.embed(text), dtype=np.float32)
    if vec.ndim != 1 or vec.shape[0] != backend.info.dimension:
        raise DimensionMismatch(
            f"backend {backend.info.backend_id} returned length {vec.size}, "
            f"declared d={backend.info.dimension}"
        )
    if not np.all(np.isfinite(vec)):
        raise DimensionMismatch(f"backend {backend.info.backend_id} returned non-finite values")
    return vec


def embed_module(backend, unit: DesignUnit, store: EmbeddingStore | None = None) -> EmbeddingVector:
    """One d-length vector for the full design text; cached when a store is given."""
    if store is not None and store.contains(unit.design_id, MODULE):
        return EmbeddingVector(store.get(unit.design_id, MODULE), MODULE, unit.design_id)
    vec = _checked(backend, unit.source_text)
    if store is not None:
        store.put(unit.design_id, MODULE, None, vec, content_hash=text_sha256(unit.source_text))
    return EmbeddingVector(vec, MODULE, unit.design_id)


def embed_lines(backend, unit: DesignUnit, store: EmbeddingStore | None = None) -> list[EmbeddingVector]:
    """Exactly line_count vectors in line order; blank lines embed as-is."""
    out = []
    for ln in unit.lines:
        if store is not None and store.contains(unit.design_id, LINE, ln.line_no):
            vec = store.get(unit.design_id, LINE, ln.line_no)
        else:
            vec = _checked(backend, ln.text)
            if store is not None:
                store.put(unit.design_id, LINE, ln.line_no, vec)
        out.append(EmbeddingVector(vec, LINE, unit.design_id, ln.line_no))
    return out


def combine_line_features(line_vec: EmbeddingVector, module_vec: EmbeddingVector) -> LineFeature:
    """Concatenate in the fixed order line || module (length 2d)."""
    if line_vec.design_id != module_vec.design_id:
        raise DesignMismatch(
            f"line from {line_vec.design_id}, module from {module_vec.design_id}"
        )
    if line_vec.values.shape != module_vec.values.shape:
        raise DimensionMismatch(
            f"line d={line_vec.values.shape[0]} vs module d={module_vec.values.shape[0]}"
        )
    values = np.concatenate([line_vec.values, module_vec.values])
    return LineFeature(values, line_vec.design_id, int(line_vec.line_no))


def embed_corpus(
    backend,
    units: list[DesignUnit],
    store: EmbeddingStore,
    max_workers: int = 4,
) -> int:
    """Populate the store with 1 module + n line vectors per design.

    Extraction fans out across designs; writes go through the single store
    writer in deterministic (design order, module-then-lines) order, so two
    runs over the same corpus produce byte-identical stores. Designs already
    complete in the store are skipped, which makes interrupted runs resumable.
    Returns the number of designs actually embedded.
    """
    pending = [
        u for u in units
        if not store.design_complete(u.design_id, u.line_count, text_sha256(u.source_text))
    ]

    def compute(unit: DesignUnit):
        module = _checked(backend, unit.source_text)
        lines = [_checked(backend, ln.text) for ln in unit.lines]
        return unit, module, lines

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for unit, module_vec, line_vecs in pool.map(compute, pending):
            if not store.contains(unit.design_id, MODULE):
                store.put(unit.design_id, MODULE, None, module_vec,
                          content_hash=text_sha256(unit.source_text))
            for no, vec in enumerate(line_vecs, start=1):
                if not store.contains(unit.design_id, LINE, no):
                    store.put(unit.design_id, LINE, no, vec)
            store.flush()
    return len(pending)
