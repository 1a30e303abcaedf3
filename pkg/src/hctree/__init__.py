"""Hierarchical clustering tree retrieval.

Chunks are embedded, agglomerated bottom-up with single linkage under cosine
distance, and queries are answered by locating the nearest tree node and
returning every chunk beneath it.
"""

from hctree.cluster import Dendrogram, DendrogramNode, build_tree, leaves_under
from hctree.search import RetrievalResult, SearchOptions, bfs_search, retrieve, topk_baseline

__all__ = [
    "Dendrogram",
    "DendrogramNode",
    "RetrievalResult",
    "SearchOptions",
    "bfs_search",
    "build_tree",
    "leaves_under",
    "retrieve",
    "topk_baseline",
]

__version__ = "0.1.0"
