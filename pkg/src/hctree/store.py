"""Index persistence.

An index directory holds four files:

``manifest.json``
    format version, dimension, leaf count, embedder fingerprint, chunking
    config and SHA-256 checksums of the three companion files.
``chunks.jsonl``
    one chunk per line: ``id, doc_id, start, end, text``.
``linkage.jsonl``
    one merge per line, in merge order: ``left, right, distance, size``.
``vectors.bin``
    magic ``HCRT``, then u32 version, u32 dim, u32 count (= 2N - 1), then
    ``count * dim`` little-endian float32 raw representatives in node-id order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hctree.cluster import Dendrogram, LinkageRow
from hctree.errors import (
    ChecksumMismatch,
    FormatVersionUnsupported,
    IndexIOError,
    InvariantViolation,
    StoreError,
)
from hctree.ingest import Chunk

FORMAT_VERSION = 1
MAGIC = b"HCRT"
_HEADER = struct.Struct("<4sIII")
COMPANIONS = ("chunks.jsonl", "linkage.jsonl", "vectors.bin")


@dataclass
class IndexManifest:
    dim: int
    n_leaves: int
    embedder: dict = field(default_factory=dict)
    chunk_config: dict = field(default_factory=dict)
    representative: str = "leaf_mean"
    format_version: int = FORMAT_VERSION
    checksums: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "dim": self.dim,
            "n_leaves": self.n_leaves,
            "embedder": self.embedder,
            "chunk_config": self.chunk_config,
            "representative": self.representative,
            "checksums": self.checksums,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IndexManifest":
        try:
            return cls(dim=int(d["dim"]), n_leaves=int(d["n_leaves"]), embedder=dict(d.get("embedder", {})),
                       chunk_config=dict(d.get("chunk_config", {})),
                       representative=d.get("representative", "leaf_mean"),
                       format_version=int(d["format_version"]), checksums=dict(d.get("checksums", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise StoreError(f"malformed manifest: {exc}") from exc


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _jsonl(rows) -> bytes:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows).encode("utf-8")


def encode_vectors(vectors: np.ndarray) -> bytes:
    count, dim = vectors.shape
    return _HEADER.pack(MAGIC, FORMAT_VERSION, dim, count) + np.ascontiguousarray(vectors, dtype="<f4").tobytes()


def decode_vectors(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise StoreError("vectors.bin is truncated")
    magic, version, dim, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise StoreError(f"vectors.bin has bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatVersionUnsupported(f"vectors.bin version {version}")
    body = blob[_HEADER.size:]
    if len(body) != 4 * dim * count:
        raise StoreError(f"vectors.bin holds {len(body)} bytes, expected {4 * dim * count}")
    return np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float64)


def save_index(tree: Dendrogram, chunks: list[Chunk], manifest: IndexManifest, dir_path: str | Path) -> IndexManifest:
    """Write the four index files; returns the manifest with checksums filled in."""
    if len(chunks) != tree.n_leaves:
        raise StoreError(f"{len(chunks)} chunks for a tree with {tree.n_leaves} leaves")
    blobs = {
        "chunks.jsonl": _jsonl(c.to_dict() for c in chunks),
        "linkage.jsonl": _jsonl(r.to_dict() for r in tree.linkage),
        "vectors.bin": encode_vectors(tree.representatives),
    }
    manifest.dim = tree.dim
    manifest.n_leaves = tree.n_leaves
    manifest.format_version = FORMAT_VERSION
    manifest.checksums = {name: _sha256(b) for name, b in blobs.items()}
    root = Path(dir_path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for name, blob in blobs.items():
            (root / name).write_bytes(blob)
        (root / "manifest.json").write_text(
            json.dumps(manifest.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    except OSError as exc:
        raise IndexIOError(f"cannot write index to {root}: {exc}") from exc
    return manifest


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise IndexIOError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _parse_jsonl(blob: bytes, name: str) -> list[dict]:
    try:
        return [json.loads(line) for line in blob.decode("utf-8").splitlines() if line.strip()]
    except (UnicodeDecodeError, ValueError) as exc:
        raise StoreError(f"{name} is not valid JSONL: {exc}") from exc


def load_index(dir_path: str | Path) -> tuple[Dendrogram, list[Chunk], IndexManifest]:
    """Read and validate an index directory written by :func:`save_index`."""
    root = Path(dir_path)
    try:
        manifest = IndexManifest.from_dict(json.loads(_read(root / "manifest.json").decode("utf-8")))
    except (UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, StoreError):
            raise
        raise StoreError(f"manifest.json is not valid JSON: {exc}") from exc
    if manifest.format_version != FORMAT_VERSION:
        raise FormatVersionUnsupported(f"index format {manifest.format_version}, expected {FORMAT_VERSION}")

    blobs = {name: _read(root / name) for name in COMPANIONS}
    for name, blob in blobs.items():
        want = manifest.checksums.get(name)
        if want != _sha256(blob):
            raise ChecksumMismatch(f"{name} checksum does not match manifest")

    n = manifest.n_leaves
    if n < 1:
        raise InvariantViolation("index has no leaves")
    try:
        chunks = [Chunk(int(r["id"]), str(r["doc_id"]), r["text"], int(r["start"]), int(r["end"]))
                  for r in _parse_jsonl(blobs["chunks.jsonl"], "chunks.jsonl")]
        linkage = [LinkageRow(int(r["left"]), int(r["right"]), float(r["distance"]), int(r["size"]))
                   for r in _parse_jsonl(blobs["linkage.jsonl"], "linkage.jsonl")]
    except (KeyError, TypeError, ValueError) as exc:
        raise StoreError(f"malformed index record: {exc}") from exc
    if len(chunks) != n:
        raise InvariantViolation(f"manifest says {n} leaves, chunks.jsonl has {len(chunks)}")
    vectors = decode_vectors(blobs["vectors.bin"])
    if vectors.shape != (2 * n - 1, manifest.dim):
        raise InvariantViolation(f"vectors.bin has shape {vectors.shape}, expected ({2 * n - 1}, {manifest.dim})")

    tree = Dendrogram(n, linkage, vectors, [c.chunk_id for c in chunks], [c.text for c in chunks])
    return tree, chunks, manifest
