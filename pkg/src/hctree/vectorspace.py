"""Dense-vector helpers and the cosine metric.

All arithmetic happens in float64 regardless of the storage dtype of the
inputs. Zero-norm and non-finite vectors are rejected rather than mapped to
some conventional distance.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from hctree.errors import DimensionMismatch, EmptySet, NonFiniteVector, ZeroNorm

__all__ = [
    "as_vector",
    "as_matrix",
    "cosine_distance",
    "inner_product",
    "normalize",
    "normalize_rows",
    "mean_vector",
]


def as_vector(v) -> np.ndarray:
    """Coerce ``v`` to a finite 1-D float64 array with at least one entry."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteVector("vector contains NaN or Inf")
    return arr


def as_matrix(vs) -> np.ndarray:
    """Coerce a sequence of equal-length vectors to a finite 2-D float64 array."""
    try:
        arr = np.asarray(vs, dtype=np.float64)
    except ValueError as exc:  # ragged input
        raise DimensionMismatch("vectors have differing dimensions") from exc
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise DimensionMismatch(f"expected an (n, dim) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteVector("vectors contain NaN or Inf")
    return arr


def _check_dims(v: np.ndarray, w: np.ndarray) -> None:
    if v.shape[0] != w.shape[0]:
        raise DimensionMismatch(f"dimension mismatch: {v.shape[0]} != {w.shape[0]}")


def _norm(v: np.ndarray) -> float:
    n = float(np.sqrt(np.dot(v, v)))
    if n == 0.0:
        raise ZeroNorm("zero-norm vector")
    return n


def inner_product(v, w) -> float:
    v, w = as_vector(v), as_vector(w)
    _check_dims(v, w)
    return float(np.dot(v, w))


def cosine_distance(v, w) -> float:
    """``1 - <v, w> / (|v| |w|)``, clamped to ``[0, 2]``."""
    v, w = as_vector(v), as_vector(w)
    _check_dims(v, w)
    d = 1.0 - float(np.dot(v, w)) / (_norm(v) * _norm(w))
    return min(2.0, max(0.0, d))


def normalize(v) -> np.ndarray:
    v = as_vector(v)
    return v / _norm(v)


def normalize_rows(m) -> np.ndarray:
    """Row-wise unit normalisation of a 2-D array; any zero row is an error."""
    m = as_matrix(m)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ZeroNorm(f"zero-norm vector at row {int(bad[0])}")
    return m / norms[:, None]


def mean_vector(vs: Iterable[Sequence[float]] | np.ndarray) -> np.ndarray:
    """Componentwise mean of a non-empty collection of vectors.

    Raises ZeroNorm when the mean collapses to the origin, which signals a
    cluster whose members cancel out.
    """
    vs = list(vs) if not isinstance(vs, np.ndarray) else vs
    if len(vs) == 0:
        raise EmptySet("mean of an empty set of vectors")
    m = as_matrix(vs)
    mean = m.mean(axis=0)
    if not np.any(mean):
        raise ZeroNorm("mean vector is the zero vector")
    return mean
