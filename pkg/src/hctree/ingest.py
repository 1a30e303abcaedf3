"""Corpus loading and overlapping character chunking.

The splitter is a recursive character splitter with exact offset tracking:

1. Cut the text into atomic pieces no longer than ``chunk_size``, using the
   first separator that occurs in a span and recursing into oversized pieces
   with the remaining separators. The empty separator means "every
   character". A separator stays attached to the piece it terminates, so
   pieces tile the text exactly.
2. Greedily pack whole pieces into a chunk of at most ``chunk_size``
   characters, then start the next chunk ``chunk_overlap`` characters before
   the end of the previous one (less when the next piece would not fit).

Lengths are counted in code points, which is what Python ``str`` indexes.
"""

from __future__ import annotations

import bisect
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from hctree.errors import CorpusDecodeError, CorpusReadError, EmptyDocument, IngestError

log = logging.getLogger(__name__)

DEFAULT_SEPARATORS = ("\n\n", "\n", "。", "；", "，", "")


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    source_path: str = ""


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    doc_id: str
    text: str
    start: int
    end: int

    def to_dict(self) -> dict:
        return {"id": self.chunk_id, "doc_id": self.doc_id, "start": self.start,
                "end": self.end, "text": self.text}


@dataclass(frozen=True)
class ChunkConfig:
    chunk_size: int = 200
    chunk_overlap: int = 40
    separators: tuple[str, ...] = field(default=DEFAULT_SEPARATORS)

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        if not 0 <= self.chunk_overlap < self.chunk_size:
            raise ValueError("chunk_overlap must satisfy 0 <= overlap < chunk_size")
        object.__setattr__(self, "separators", tuple(self.separators))

    def to_dict(self) -> dict:
        return {"chunk_size": self.chunk_size, "chunk_overlap": self.chunk_overlap,
                "separators": list(self.separators)}


def _piece_boundaries(text: str, start: int, end: int, separators: Sequence[str],
                      size: int, out: list[int]) -> None:
    # appends interior cut positions of text[start:end] to out
    if end - start <= size:
        return
    for i, sep in enumerate(separators):
        if sep == "":
            break
        if text.find(sep, start, end) != -1:
            rest = separators[i + 1:]
            piece_start = start
            pos = text.find(sep, start, end)
            while pos != -1:
                cut = pos + len(sep)
                if cut < end:
                    _piece_boundaries(text, piece_start, cut, rest, size, out)
                    out.append(cut)
                    piece_start = cut
                pos = text.find(sep, cut, end)
            _piece_boundaries(text, piece_start, end, rest, size, out)
            return
    out.extend(range(start + 1, end))


def chunk_spans(text: str, cfg: ChunkConfig) -> list[tuple[int, int]]:
    """Return ``[start, end)`` spans covering ``text`` per the packing rule."""
    n = len(text)
    if n == 0:
        return []
    cuts: list[int] = []
    _piece_boundaries(text, 0, n, cfg.separators, cfg.chunk_size, cuts)
    bounds = sorted(set(cuts)) + [n]

    spans = []
    start = 0
    while True:
        # largest boundary reachable from start
        idx = bisect.bisect_right(bounds, start + cfg.chunk_size) - 1
        end = bounds[idx]
        spans.append((start, end))
        if end == n:
            return spans
        next_bound = bounds[idx + 1]
        start = max(end - cfg.chunk_overlap, next_bound - cfg.chunk_size)


def split_text(doc: Document, cfg: ChunkConfig | None = None, first_id: int = 1) -> list[Chunk]:
    """Split one document into chunks numbered from ``first_id``.

    Whitespace-only spans are dropped.
    """
    cfg = cfg or ChunkConfig()
    if not doc.text:
        raise EmptyDocument(f"document {doc.doc_id!r} has no text")
    chunks = []
    for start, end in chunk_spans(doc.text, cfg):
        piece = doc.text[start:end]
        if not piece.strip():
            continue
        chunks.append(Chunk(first_id + len(chunks), doc.doc_id, piece, start, end))
    return chunks


def _read_text(path: Path) -> str:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorpusReadError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusDecodeError(f"{path} is not valid UTF-8 (byte {exc.start})") from exc


def read_documents(paths: Iterable[str | Path]) -> list[Document]:
    """Read plain-text files (one document each) and JSONL corpora.

    A ``.jsonl`` file holds one ``{"doc_id", "text"}`` object per line; any
    other file becomes a single document whose id is the file stem.
    """
    docs: list[Document] = []
    seen: set[str] = set()
    for p in paths:
        path = Path(p)
        text = _read_text(path)
        if path.suffix == ".jsonl":
            entries = []
            for lineno, line in enumerate(text.splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    entries.append((str(obj["doc_id"]), obj["text"]))
                except (ValueError, KeyError, TypeError) as exc:
                    raise IngestError(f"{path}:{lineno}: bad corpus record ({exc})") from exc
        else:
            entries = [(path.stem, text)]
        for doc_id, body in entries:
            if doc_id in seen:
                raise IngestError(f"duplicate doc_id {doc_id!r} in {path}")
            seen.add(doc_id)
            if not body.strip():
                log.warning("skipping empty document %r from %s", doc_id, path)
                continue
            docs.append(Document(doc_id, body, str(path)))
    return docs


def load_corpus(paths: Iterable[str | Path], cfg: ChunkConfig | None = None
                ) -> tuple[list[Document], list[Chunk]]:
    """Load documents in path order and chunk them with global ids ``1..N``."""
    cfg = cfg or ChunkConfig()
    docs = read_documents(paths)
    chunks: list[Chunk] = []
    for doc in docs:
        chunks.extend(split_text(doc, cfg, first_id=len(chunks) + 1))
    return docs, chunks


def expand_corpus_paths(paths: Iterable[str | Path]) -> list[Path]:
    """Expand directories into their sorted ``*.txt`` / ``*.jsonl`` files."""
    out: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            out.extend(sorted(f for f in path.iterdir()
                              if f.is_file() and f.suffix in (".txt", ".jsonl")))
        else:
            out.append(path)
    return out
