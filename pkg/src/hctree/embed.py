"""Embedding providers and the on-disk embedding cache.

Two providers exist: ``remote_api`` speaks the common embeddings REST shape
(``POST {"model", "input"}`` answered by ``{"data": [{"index", "embedding"}]}``)
and ``deterministic_test`` hashes text into reproducible unit vectors so that
nothing in the test suite needs the network.
"""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from hctree._http import post_json
from hctree.errors import DimensionMismatch, NonFiniteVector, ProviderError, ZeroNorm

log = logging.getLogger(__name__)

PROVIDERS = ("remote_api", "deterministic_test")
KINDS = ("document", "query")

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@dataclass(frozen=True)
class EmbedderConfig:
    provider: str = "deterministic_test"
    model_id: str = "hash-embed-v1"
    endpoint_url: str = ""
    dim: int = 64
    batch_size: int = 32
    document_prefix: str = ""
    query_prefix: str = ""
    api_key_env: str = ""
    seed: int = 0
    attempts: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4
    timeout: float = 30.0

    def __post_init__(self):
        if self.provider not in PROVIDERS:
            raise ValueError(f"unknown embedding provider {self.provider!r}")
        if self.dim < 1 or self.batch_size < 1 or self.max_in_flight < 1:
            raise ValueError("dim, batch_size and max_in_flight must be positive")
        if self.provider == "deterministic_test" and self.dim < 2:
            raise ValueError("deterministic_test embeddings need dim >= 2")

    def prefix(self, kind: str) -> str:
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
        return self.document_prefix if kind == "document" else self.query_prefix

    def fingerprint(self) -> dict:
        """Fields that determine the vectors; recorded in index manifests."""
        fp = {"provider": self.provider, "model_id": self.model_id, "dim": self.dim,
              "document_prefix": self.document_prefix, "query_prefix": self.query_prefix}
        if self.provider == "deterministic_test":
            fp["seed"] = self.seed
        return fp


# ---------------------------------------------------------------------------
# deterministic hash embedder

def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x * np.uint64(1) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _text_key(text: str, seed: int) -> int:
    h = hashlib.blake2b(text.encode("utf-8"), digest_size=8,
                        key=struct.pack("<q", seed))
    return int.from_bytes(h.digest(), "little")


def hash_embed(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Map ``text`` to a pseudorandom unit vector, reproducibly.

    A keyed 64-bit BLAKE2b of the text seeds a counter-mode SplitMix64
    stream; pairs of 53-bit uniforms go through Box-Muller to give standard
    normals, and the result is normalised.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    n_pairs = (dim + 1) // 2
    key = np.uint64(_text_key(text, seed))
    with np.errstate(over="ignore"):
        counters = key + np.arange(2 * n_pairs, dtype=np.uint64) * _GOLDEN
    bits = _splitmix64(counters) >> np.uint64(11)
    u = bits.astype(np.float64) * 2.0 ** -53
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * n_pairs)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    z = z[:dim]
    return z / np.sqrt(np.dot(z, z))


# ---------------------------------------------------------------------------
# providers

def _check_vectors(vectors: np.ndarray, dim: int) -> np.ndarray:
    if vectors.ndim != 2 or vectors.shape[1] != dim:
        raise DimensionMismatch(f"provider returned vectors of shape {vectors.shape}, expected dim {dim}")
    if not np.all(np.isfinite(vectors)):
        raise NonFiniteVector("provider returned NaN/Inf")
    norms = np.sqrt(np.einsum("ij,ij->i", vectors, vectors))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNorm(f"provider returned a zero vector for input {int(zero[0])}")
    return vectors


class RemoteEmbedder:
    """Client for an embeddings endpoint.

    Batches of ``cfg.batch_size`` texts are sent with at most
    ``cfg.max_in_flight`` requests outstanding. ``transport`` and ``sleep``
    exist so tests can substitute them.
    """

    def __init__(self, cfg: EmbedderConfig, transport: httpx.BaseTransport | None = None,
                 sleep=time.sleep):
        if not cfg.endpoint_url:
            raise ProviderError("remote_api provider requires an endpoint_url")
        self.cfg = cfg
        self._sleep = sleep
        headers = {}
        if cfg.api_key_env:
            key = os.environ.get(cfg.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=cfg.timeout, headers=headers, transport=transport)
        self.requests = 0

    def close(self):
        self._client.close()

    def _embed_one_batch(self, batch: list[str]) -> np.ndarray:
        self.requests += 1
        body = post_json(self._client, self.cfg.endpoint_url,
                         {"model": self.cfg.model_id, "input": batch},
                         attempts=self.cfg.attempts, backoff=self.cfg.backoff, sleep=self._sleep)
        try:
            data = sorted(body["data"], key=lambda item: item["index"])
            vectors = np.array([item["embedding"] for item in data], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed embeddings response: {exc}") from exc
        if len(data) != len(batch):
            raise ProviderError(f"provider returned {len(data)} embeddings for {len(batch)} inputs")
        return vectors

    def __call__(self, texts: list[str]) -> np.ndarray:
        size = self.cfg.batch_size
        batches = [texts[i:i + size] for i in range(0, len(texts), size)]
        if len(batches) == 1 or self.cfg.max_in_flight == 1:
            parts = [self._embed_one_batch(b) for b in batches]
        else:
            with ThreadPoolExecutor(max_workers=self.cfg.max_in_flight) as pool:
                parts = list(pool.map(self._embed_one_batch, batches))
        return np.vstack(parts)


class HashEmbedder:
    def __init__(self, cfg: EmbedderConfig):
        self.cfg = cfg
        self.requests = 0

    def __call__(self, texts: list[str]) -> np.ndarray:
        self.requests += 1
        return np.vstack([hash_embed(t, self.cfg.dim, self.cfg.seed) for t in texts])

    def close(self):
        pass


def make_embedder(cfg: EmbedderConfig, **kwargs):
    if cfg.provider == "deterministic_test":
        return HashEmbedder(cfg)
    return RemoteEmbedder(cfg, **kwargs)


def embed_batch(texts: Sequence[str], kind: str, cfg: EmbedderConfig, embedder=None) -> np.ndarray:
    """Embed ``texts`` as an ``(n, cfg.dim)`` float64 array, order preserved.

    The configured document or query prefix is prepended to each text.
    """
    if not texts:
        raise ValueError("texts must be non-empty")
    if any(not t for t in texts):
        raise ValueError("texts must not contain empty strings")
    prefix = cfg.prefix(kind)
    own = embedder is None
    embedder = embedder or make_embedder(cfg)
    try:
        vectors = embedder([prefix + t for t in texts])
    finally:
        if own:
            embedder.close()
    return _check_vectors(np.asarray(vectors, dtype=np.float64), cfg.dim)


# ---------------------------------------------------------------------------
# cache

_CACHE_MAGIC = b"HCEC"
_CACHE_VERSION = 1


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    corrupt: int = 0


class EmbeddingCache:
    """Content-addressed embedding store under ``root``.

    Entry layout: magic ``HCEC``, u32 version, u32 model-id length, model id
    (UTF-8), u32 dim, then ``dim`` little-endian float32 values. Writes go
    through a temp file and ``os.replace`` so readers never see partial
    entries; writers are serialised by a lock.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.stats = CacheStats()
        self._write_lock = threading.Lock()

    @staticmethod
    def key(cfg: EmbedderConfig, kind: str, text: str) -> str:
        h = hashlib.sha256()
        for part in (cfg.provider, cfg.model_id, str(cfg.seed) if cfg.provider == "deterministic_test" else "",
                     kind, cfg.prefix(kind) + text):
            h.update(part.encode("utf-8"))
            h.update(b"\0")
        return h.hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.bin"

    def get(self, key: str, model_id: str, dim: int) -> np.ndarray | None:
        path = self._path(key)
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            return None
        try:
            if raw[:4] != _CACHE_MAGIC:
                raise ValueError("bad magic")
            version, mlen = struct.unpack_from("<II", raw, 4)
            if version != _CACHE_VERSION:
                raise ValueError(f"version {version}")
            stored_model = raw[12:12 + mlen].decode("utf-8")
            (stored_dim,) = struct.unpack_from("<I", raw, 12 + mlen)
            payload = raw[16 + mlen:]
            if stored_model != model_id or stored_dim != dim or len(payload) != 4 * dim:
                raise ValueError(f"entry is model {stored_model!r} dim {stored_dim}, "
                                 f"expected {model_id!r} dim {dim}")
            vec = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        except (ValueError, struct.error, UnicodeDecodeError) as exc:
            self.stats.corrupt += 1
            log.warning("ignoring corrupt cache entry %s: %s", path.name, exc)
            return None
        return vec

    def put(self, key: str, model_id: str, vector: np.ndarray) -> None:
        mid = model_id.encode("utf-8")
        blob = (_CACHE_MAGIC + struct.pack("<II", _CACHE_VERSION, len(mid)) + mid
                + struct.pack("<I", vector.shape[0]) + vector.astype("<f4").tobytes())
        path = self._path(key)
        with self._write_lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(blob)
                os.replace(tmp, path)
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise


def cache_get_or_embed(texts: Sequence[str], kind: str, cfg: EmbedderConfig,
                       cache: EmbeddingCache | None, embedder=None) -> np.ndarray:
    """Like :func:`embed_batch` but served from ``cache`` where possible.

    Only cache misses reach the provider, in one order-preserving call.
    Results are rounded through float32 whether they were hits or misses, so
    a warm rerun returns exactly what the cold run did.
    """
    if cache is None:
        return embed_batch(texts, kind, cfg, embedder).astype(np.float32).astype(np.float64)
    out = np.empty((len(texts), cfg.dim), dtype=np.float64)
    missing: list[int] = []
    keys = [cache.key(cfg, kind, t) for t in texts]
    for i, key in enumerate(keys):
        vec = cache.get(key, cfg.model_id, cfg.dim)
        if vec is None:
            missing.append(i)
        else:
            out[i] = vec
            cache.stats.hits += 1
    if missing:
        # identical texts within one call are embedded once
        unique = list(dict.fromkeys(keys[i] for i in missing))
        first = {}
        for i in missing:
            first.setdefault(keys[i], i)
        fresh = embed_batch([texts[first[k]] for k in unique], kind, cfg, embedder)
        fresh = fresh.astype(np.float32)
        by_key = {}
        for k, vec in zip(unique, fresh):
            cache.put(k, cfg.model_id, vec)
            by_key[k] = vec.astype(np.float64)
        for i in missing:
            out[i] = by_key[keys[i]]
        cache.stats.misses += len(missing)
    return out
