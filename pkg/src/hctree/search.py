"""Nearest-subtree retrieval over a Dendrogram, plus the flat top-k baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hctree.cluster import Dendrogram
from hctree.errors import BadK, DimensionMismatch
from hctree.vectorspace import as_vector, normalize


@dataclass(frozen=True)
class SearchOptions:
    mips_refine: int | None = None
    exclude_root: bool = False

    def __post_init__(self):
        if self.mips_refine is not None and self.mips_refine < 1:
            raise ValueError("mips_refine must be >= 1 when given")


@dataclass(frozen=True)
class RetrievalResult:
    best_node_id: int
    best_distance: float
    chunks: list[tuple[int, str]] = field(default_factory=list)
    refined: bool = False
    scores: list[float] | None = None

    @property
    def chunk_ids(self) -> list[int]:
        return [c for c, _ in self.chunks]

    def to_dict(self) -> dict:
        out = {
            "best_node_id": self.best_node_id,
            "best_distance": self.best_distance,
            "refined": self.refined,
            "chunks": [{"chunk_id": c, "text": t} for c, t in self.chunks],
        }
        if self.scores is not None:
            for item, s in zip(out["chunks"], self.scores):
                item["score"] = s
        return out


def _query(tree: Dendrogram, q) -> tuple[np.ndarray, np.ndarray]:
    q = as_vector(q)
    if q.shape[0] != tree.dim:
        raise DimensionMismatch(f"query has dim {q.shape[0]}, index has dim {tree.dim}")
    return q, normalize(q)


def node_distances(tree: Dendrogram, q) -> np.ndarray:
    """Cosine distance from ``q`` to every node representative (index = id - 1)."""
    _, unit = _query(tree, q)
    d = 1.0 - tree.unit_representatives @ unit
    return np.clip(d, 0.0, 2.0, out=d)


def _argmin_bfs(tree: Dendrogram, d: np.ndarray) -> int:
    # first node in BFS order among those at the minimum: what a queue walk
    # with a strict "<" update would settle on
    hits = np.flatnonzero(d == d.min())
    if hits.size == 1:
        return int(hits[0]) + 1
    return int(hits[np.argmin(tree.bfs_rank[hits])]) + 1


def bfs_search(tree: Dendrogram, q, exclude_root: bool = False) -> tuple[int, float]:
    """Node whose representative is nearest to ``q`` and its distance.

    Walking the whole tree breadth-first and keeping the first strict
    improvement visits every node, so this is the global argmin with ties
    going to the node met earliest in BFS order. The scan is vectorised.
    """
    d = node_distances(tree, q)
    if exclude_root and tree.n_leaves > 1:
        d[tree.root_id - 1] = np.inf
    best = _argmin_bfs(tree, d)
    return best, float(d[best - 1])


def retrieve(tree: Dendrogram, q, opts: SearchOptions | None = None) -> RetrievalResult:
    """Return every chunk under the nearest node, optionally cut to top-m by inner product."""
    opts = opts or SearchOptions()
    raw, _ = _query(tree, q)
    best, dist = bfs_search(tree, raw, exclude_root=opts.exclude_root)
    leaves = tree.leaf_nodes_under(best)
    refined = opts.mips_refine is not None and leaves.size > opts.mips_refine
    scores = None
    if refined:
        ids = tree.leaf_chunk_ids[leaves - 1]
        s = tree.leaf_vectors[leaves - 1] @ raw
        order = np.lexsort((ids, -s))[: opts.mips_refine]
        leaves = leaves[order]
        scores = [float(v) for v in s[order]]
    texts = tree.texts
    chunks = [(int(tree.leaf_chunk_ids[k - 1]), texts[k - 1] if texts else "") for k in leaves]
    return RetrievalResult(best, dist, chunks, refined, scores)


def topk_baseline(leaf_vectors, q, k: int, chunk_ids=None) -> list[tuple[int, float]]:
    """Brute-force top-k by raw inner product; ties go to the lower chunk id."""
    leaf_vectors = np.asarray(leaf_vectors, dtype=np.float64)
    q = as_vector(q)
    n = leaf_vectors.shape[0]
    if leaf_vectors.ndim != 2 or leaf_vectors.shape[1] != q.shape[0]:
        raise DimensionMismatch("query and leaf vectors differ in dimension")
    if not 1 <= k <= n:
        raise BadK(f"k must be in 1..{n}, got {k}")
    ids = np.arange(1, n + 1) if chunk_ids is None else np.asarray(chunk_ids)
    s = leaf_vectors @ q
    order = np.lexsort((ids, -s))[:k]
    return [(int(ids[i]), float(s[i])) for i in order]
