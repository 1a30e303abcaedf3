"""Single-linkage agglomerative clustering under cosine distance.

Node ids follow the merge-history convention: leaves are ``1..N`` in chunk
order, the m-th merge creates node ``N + m`` and the root is ``2N - 1``.
Every node carries a representative vector, the mean of all leaf vectors
beneath it.

When several cluster pairs are at the same minimal distance (exact float
equality) the pair with the lowest smaller id wins, then the lowest larger
id.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hctree.errors import (
    DegenerateMean,
    DimensionMismatch,
    DisjointnessViolation,
    EmptyCorpus,
    EmptySet,
    InvariantViolation,
    UnknownNode,
)
from hctree.vectorspace import as_matrix, cosine_distance, normalize_rows

REPRESENTATIVE_MODES = ("leaf_mean", "children_mean")


@dataclass(frozen=True)
class LinkageRow:
    left: int
    right: int
    distance: float
    size: int

    def to_dict(self) -> dict:
        return {"left": self.left, "right": self.right, "distance": self.distance, "size": self.size}


@dataclass(frozen=True)
class DendrogramNode:
    id: int
    children: tuple[int, int] | tuple[()]
    representative: np.ndarray
    size: int
    merge_distance: float
    chunk_id: int | None

    @property
    def is_leaf(self) -> bool:
        return not self.children


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class Dendrogram:
    """Immutable merge tree over ``N`` leaves.

    Arrays are indexed by ``node_id - 1``. ``children[k]`` is ``(0, 0)`` for
    leaves. Construct through :func:`build_tree` or :meth:`from_linkage`;
    the constructor validates every structural invariant.
    """

    def __init__(self, n_leaves: int, linkage: Sequence[LinkageRow], representatives: np.ndarray,
                 chunk_ids: Sequence[int] | None = None, texts: Sequence[str] | None = None):
        if n_leaves < 1:
            raise InvariantViolation("a dendrogram needs at least one leaf")
        n = n_leaves
        reps = np.array(representatives, dtype=np.float64)
        if reps.ndim != 2 or reps.shape[0] != 2 * n - 1:
            raise InvariantViolation(f"expected {2 * n - 1} representatives, got shape {reps.shape}")
        if len(linkage) != n - 1:
            raise InvariantViolation(f"expected {n - 1} linkage rows, got {len(linkage)}")
        chunk_ids = np.arange(1, n + 1) if chunk_ids is None else np.asarray(chunk_ids, dtype=np.int64)
        if chunk_ids.shape != (n,) or np.any(np.diff(chunk_ids) <= 0):
            raise InvariantViolation("leaf chunk ids must be strictly increasing, one per leaf")
        if texts is not None and len(texts) != n:
            raise InvariantViolation("one text per leaf required")

        total = 2 * n - 1
        children = np.zeros((total, 2), dtype=np.int64)
        parent = np.zeros(total, dtype=np.int64)
        size = np.ones(total, dtype=np.int64)
        dist = np.zeros(total, dtype=np.float64)
        prev = -np.inf
        for m, row in enumerate(linkage, start=1):
            node = n + m
            left, right = int(row.left), int(row.right)
            if not 1 <= left < right < node:
                raise InvariantViolation(f"merge {m}: children ({left}, {right}) invalid for node {node}")
            for c in (left, right):
                if parent[c - 1]:
                    raise InvariantViolation(f"node {c} has two parents")
                parent[c - 1] = node
            d = float(row.distance)
            if not 0.0 <= d <= 2.0:
                raise InvariantViolation(f"merge {m}: distance {d} outside [0, 2]")
            if d < prev:
                raise InvariantViolation(f"merge {m}: distance {d} decreases from {prev}")
            prev = d
            children[node - 1] = (left, right)
            size[node - 1] = size[left - 1] + size[right - 1]
            if int(row.size) != size[node - 1]:
                raise InvariantViolation(f"merge {m}: size {row.size} != {size[node - 1]}")
            dist[node - 1] = d
        if n > 1 and (np.count_nonzero(parent[:-1] == 0) or size[-1] != n):
            raise InvariantViolation("linkage does not form a single tree")

        self.n_leaves = n
        self.dim = reps.shape[1]
        self.children = _readonly(children)
        self.parent = _readonly(parent)
        self.size = _readonly(size)
        self.merge_distance = _readonly(dist)
        self.representatives = _readonly(reps)
        self.unit_representatives = _readonly(normalize_rows(reps))
        self.leaf_chunk_ids = _readonly(chunk_ids.copy())
        self.texts = tuple(texts) if texts is not None else None
        self.linkage = tuple(LinkageRow(int(r.left), int(r.right), float(r.distance), int(r.size))
                             for r in linkage)
        self._layout()

    @property
    def root_id(self) -> int:
        return 2 * self.n_leaves - 1

    @property
    def n_nodes(self) -> int:
        return 2 * self.n_leaves - 1

    @property
    def leaf_vectors(self) -> np.ndarray:
        return self.representatives[: self.n_leaves]

    def _layout(self):
        # BFS rank (root first, lower child id first) and a leaf ordering in
        # which every subtree occupies a contiguous slice.
        total = self.n_nodes
        bfs = np.empty(total, dtype=np.int64)
        depth = np.zeros(total, dtype=np.int64)
        start = np.zeros(total, dtype=np.int64)
        order = np.empty(self.n_leaves, dtype=np.int64)
        queue = [self.root_id]
        head = 0
        while head < len(queue):
            node = queue[head]
            bfs[node - 1] = head
            head += 1
            left, right = self.children[node - 1]
            if left:
                depth[left - 1] = depth[right - 1] = depth[node - 1] + 1
                start[left - 1] = start[node - 1]
                start[right - 1] = start[node - 1] + self.size[left - 1]
                queue.append(int(left))
                queue.append(int(right))
            else:
                order[start[node - 1]] = node
        self.bfs_rank = _readonly(bfs)
        self.depth = _readonly(depth)
        self._leaf_start = _readonly(start)
        self._leaf_order = _readonly(order)

    @property
    def height(self) -> int:
        """Number of edges on the longest root-to-leaf path."""
        return int(self.depth.max())

    def check_id(self, node_id) -> int:
        try:
            node_id = int(node_id)
        except (TypeError, ValueError):
            raise UnknownNode(f"not a node id: {node_id!r}") from None
        if not 1 <= node_id <= self.n_nodes:
            raise UnknownNode(f"node {node_id} not in 1..{self.n_nodes}")
        return node_id

    def is_leaf(self, node_id: int) -> bool:
        return self.check_id(node_id) <= self.n_leaves

    def node(self, node_id: int) -> DendrogramNode:
        node_id = self.check_id(node_id)
        k = node_id - 1
        leaf = node_id <= self.n_leaves
        return DendrogramNode(
            id=node_id,
            children=() if leaf else (int(self.children[k, 0]), int(self.children[k, 1])),
            representative=self.representatives[k],
            size=int(self.size[k]),
            merge_distance=float(self.merge_distance[k]),
            chunk_id=int(self.leaf_chunk_ids[k]) if leaf else None,
        )

    def leaf_nodes_under(self, node_id: int) -> np.ndarray:
        """Leaf node ids under ``node_id`` in ascending order."""
        k = self.check_id(node_id) - 1
        s = self._leaf_start[k]
        return np.sort(self._leaf_order[s:s + self.size[k]])

    @classmethod
    def from_linkage(cls, n_leaves, linkage, representatives, chunk_ids=None, texts=None):
        return cls(n_leaves, linkage, representatives, chunk_ids, texts)


def leaves_under(tree: Dendrogram, node_id: int) -> list[int]:
    """Chunk ids of all leaves in the subtree rooted at ``node_id``, ascending."""
    leaves = tree.leaf_nodes_under(node_id)
    return [int(c) for c in tree.leaf_chunk_ids[leaves - 1]]


def single_linkage_distance(a, b) -> float:
    """Minimum pairwise cosine distance between two disjoint vector sets."""
    a, b = as_matrix(a) if len(a) else None, as_matrix(b) if len(b) else None
    if a is None or b is None:
        raise EmptySet("single linkage needs two non-empty clusters")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch("clusters have different dimensions")
    shared = {r.tobytes() for r in a} & {r.tobytes() for r in b}
    if shared:
        raise DisjointnessViolation("clusters share a vector")
    return min(cosine_distance(x, y) for x in a for y in b)


def pairwise_cosine_distances(vectors: np.ndarray) -> np.ndarray:
    """Full symmetric float64 distance matrix with ``inf`` on the diagonal.

    The upper triangle is mirrored into the lower one so that ``d(i, j)`` and
    ``d(j, i)`` are bitwise equal.
    """
    unit = normalize_rows(vectors)
    n = unit.shape[0]
    d = unit @ unit.T
    np.subtract(1.0, d, out=d)
    np.clip(d, 0.0, 2.0, out=d)
    block = 512
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        d[lo:hi, :lo] = d[:lo, lo:hi].T
        sub = d[lo:hi, lo:hi]
        iu = np.triu_indices(hi - lo, 1)
        sub[(iu[1], iu[0])] = sub[iu]
    np.fill_diagonal(d, np.inf)
    return d


def _mst_prim(d: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # minimum spanning tree of the complete graph weighted by d
    n = d.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = d[0].copy()
    best[0] = np.inf
    parent = np.zeros(n, dtype=np.int64)
    src = np.empty(n - 1, dtype=np.int64)
    dst = np.empty(n - 1, dtype=np.int64)
    w = np.empty(n - 1, dtype=np.float64)
    closer = np.empty(n, dtype=bool)
    for k in range(n - 1):
        v = int(np.argmin(best))
        src[k], dst[k], w[k] = parent[v], v, best[v]
        in_tree[v] = True
        best[v] = np.inf
        row = d[v]
        np.less(row, best, out=closer)
        closer &= ~in_tree
        best[closer] = row[closer]
        parent[closer] = v
    return src, dst, w


class _Clusters:
    """Union-find over leaf slots that remembers each cluster's node id."""

    def __init__(self, n: int):
        self.n = n
        self.up = list(range(n))
        self.node = list(range(1, n + 1))  # meaningful at roots only
        self.merges: list[tuple[int, int]] = []
        self.distances: list[float] = []

    def find(self, x: int) -> int:
        up = self.up
        root = x
        while up[root] != root:
            root = up[root]
        while up[x] != root:
            up[x], x = root, up[x]
        return root

    def join(self, ra: int, rb: int, dist: float) -> int:
        a, b = self.node[ra], self.node[rb]
        new_id = self.n + len(self.merges) + 1
        self.merges.append((min(a, b), max(a, b)))
        self.distances.append(dist)
        self.up[rb] = ra
        self.node[ra] = new_id
        return new_id


def merge_sequence(d: np.ndarray) -> list[tuple[int, int, float]]:
    """Single-linkage merges ``(left_id, right_id, distance)`` from a distance matrix.

    ``d`` must be symmetric with ``inf`` on the diagonal. Merges replay the
    minimum spanning tree in weight order. When several MST edges share a
    weight, the clusters they touch are re-examined against ``d`` directly:
    the lowest-id rule may prefer a pair joined by an equally short edge that
    the MST did not keep, and merge order decides the ids handed out.
    """
    n = d.shape[0]
    cl = _Clusters(n)
    if n > 1:
        src, dst, w = _mst_prim(d)
        order = np.argsort(w, kind="stable")
        src, dst, w = src[order].tolist(), dst[order].tolist(), w[order].tolist()
        k = 0
        while k < n - 1:
            end = k + 1
            while end < n - 1 and w[end] == w[k]:
                end += 1
            if end - k == 1:
                cl.join(cl.find(src[k]), cl.find(dst[k]), w[k])
            else:
                _merge_tied_level(d, cl, src[k:end] + dst[k:end], w[k])
            k = end
    return [(a, b, dist) for (a, b), dist in zip(cl.merges, cl.distances)]


def _merge_tied_level(d: np.ndarray, cl: _Clusters, endpoints: list[int], level: float) -> None:
    roots = sorted({cl.find(x) for x in endpoints})
    root_set = set(roots)
    slots = [x for x in range(cl.n) if cl.find(x) in root_set]
    label = np.array([cl.node[cl.find(x)] for x in slots])
    # cluster pairs whose closest members sit at exactly this distance
    rows, cols = np.nonzero(d[np.ix_(slots, slots)] == level)
    nbrs: dict[int, set[int]] = {cl.node[r]: set() for r in roots}
    for a, b in zip(label[rows].tolist(), label[cols].tolist()):
        if a != b:
            nbrs[a].add(b)
    root_of = {cl.node[r]: r for r in roots}

    heap = [cid for cid, s in nbrs.items() if s]
    heapq.heapify(heap)
    while heap:
        a = heapq.heappop(heap)
        if not nbrs.get(a):
            continue
        b = min(nbrs[a])
        merged = (nbrs.pop(a) | nbrs.pop(b)) - {a, b}
        ra = root_of.pop(a)
        new_id = cl.join(ra, root_of.pop(b), level)
        root_of[new_id] = ra
        for x in merged:
            nbrs[x] -= {a, b}
            nbrs[x].add(new_id)
        nbrs[new_id] = merged
        if merged:
            heapq.heappush(heap, new_id)


def build_tree(vectors, chunk_ids: Sequence[int] | None = None, texts: Sequence[str] | None = None,
               representative: str = "leaf_mean") -> Dendrogram:
    """Agglomerate ``vectors`` (one per chunk, in chunk order) into a Dendrogram.

    O(N^2) time and memory: one pairwise distance matrix, then a minimum
    spanning tree (single linkage merges are exactly the MST edges in
    weight order).

    ``representative="children_mean"`` averages the two child
    representatives instead of all member leaves.
    """
    if representative not in REPRESENTATIVE_MODES:
        raise ValueError(f"representative must be one of {REPRESENTATIVE_MODES}")
    if vectors is None or len(vectors) == 0:
        raise EmptyCorpus("cannot build a tree over zero vectors")
    x = as_matrix(vectors)
    n, dim = x.shape
    chunk_ids = list(range(1, n + 1) if chunk_ids is None else chunk_ids)
    if len(chunk_ids) != n:
        raise ValueError("one chunk id per vector required")

    d = pairwise_cosine_distances(x)  # also rejects zero-norm rows
    merges = merge_sequence(d)
    del d

    reps = np.empty((2 * n - 1, dim), dtype=np.float64)
    reps[:n] = x
    sums = np.empty_like(reps)
    sums[:n] = x
    sizes = np.ones(2 * n - 1, dtype=np.int64)
    linkage = []
    for m, (left, right, dist) in enumerate(merges, start=1):
        k = n + m - 1
        sizes[k] = sizes[left - 1] + sizes[right - 1]
        sums[k] = sums[left - 1] + sums[right - 1]
        if representative == "leaf_mean":
            rep = sums[k] / sizes[k]
        else:
            rep = 0.5 * (reps[left - 1] + reps[right - 1])
        if not np.any(rep):
            raise DegenerateMean(k + 1)
        reps[k] = rep
        linkage.append(LinkageRow(left, right, dist, int(sizes[k])))
    return Dendrogram(n, linkage, reps, chunk_ids, texts)
