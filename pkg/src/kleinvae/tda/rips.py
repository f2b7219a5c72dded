"""Vietoris-Rips persistent homology over a prime field.

The reduction kernel is compiled when possible (``_reduce``); otherwise the
pure-Python twin ``_reduce_py`` is used.  Set ``KLEINVAE_PURE_PYTHON=1`` to
force the fallback.  Both produce identical diagrams.

Dimension ``d >= 1`` is computed by reducing the coboundary matrix
(persistent cohomology gives the same barcode as homology over a field),
which lets clearing skip every column already known to be a pivot and
never touches ``(max_dim + 2)``-simplices except as cofacets on the fly.
"""

from __future__ import annotations

import os
from math import comb

import numpy as np
from scipy.spatial.distance import pdist, squareform

from . import _reduce_py
from .diagrams import PersistenceDiagram

try:
    if os.environ.get("KLEINVAE_PURE_PYTHON"):
        raise ImportError("pure Python kernel requested")
    from . import _reduce as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_KERNELS = {"python": _reduce_py.persistence_pairs}
if _compiled is not None:
    _KERNELS["compiled"] = _compiled.persistence_pairs

INDEX_BITS = 40
RANK_BITS = 23
DEFAULT_MEMORY_BUDGET = 1.5e9  # bytes
# rough bytes per top-dimensional column: key + hash-map slot + bookkeeping
_BYTES_PER_SIMPLEX = 64


class CapacityError(MemoryError):
    """The requested complex does not fit the encoding or the memory budget."""


def distance_matrix(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return squareform(pdist(pts.reshape(len(pts), -1)))


def enclosing_radius(D: np.ndarray) -> float:
    """``min_i max_j D[i, j]``: past this scale the complex is a cone."""
    return float(np.min(np.max(D, axis=1))) if len(D) else 0.0


def _check_matrix(D: np.ndarray) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.all(np.isfinite(D)) or np.any(D < 0):
        raise ValueError("distances must be finite and non-negative")
    if not np.allclose(D, D.T, rtol=0, atol=0) or np.any(np.diag(D) != 0):
        raise ValueError("distance matrix must be symmetric with zero diagonal")
    return D


def count_simplices(D: np.ndarray, threshold: float, dim: int) -> int:
    """Number of ``dim``-simplices of diameter ``<= threshold``."""
    A = (D <= threshold).astype(float)
    np.fill_diagonal(A, 0.0)
    n = len(D)
    if dim == 0:
        return n
    if dim == 1:
        return int(A.sum() // 2)
    if dim == 2:
        return int(round(np.trace(A @ A @ A) / 6))
    raise ValueError("counting is implemented for dim <= 2")


def rips_ph(D, max_dim: int = 1, threshold: float | None = None, field_char: int = 2,
            backend: str | None = None, memory_budget: float = DEFAULT_MEMORY_BUDGET) -> PersistenceDiagram:
    """Persistence diagram of the Rips filtration of a distance matrix.

    Simplices enter at their diameter; ties are broken by dimension and then
    lexicographically on the descending vertex tuple.  ``threshold`` defaults
    to the enclosing radius.  Zero-persistence pairs are dropped.
    """
    if max_dim not in (0, 1, 2):
        raise ValueError("max_dim must be 0, 1 or 2")
    if field_char not in (2, 3, 5, 7):
        raise ValueError("field characteristic must be a small prime")
    D = _check_matrix(D)
    n = len(D)
    if threshold is None:
        threshold = enclosing_radius(D)
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if n == 0:
        return PersistenceDiagram(np.empty((0, 3)), field_char)

    if comb(n, max_dim + 2) >= 2 ** INDEX_BITS:
        raise CapacityError(f"{n} points exceed the simplex index range for max_dim={max_dim}")
    iu = np.triu_indices(n, 1)
    values = np.unique(D[iu])
    if len(values) >= 2 ** RANK_BITS:
        raise CapacityError("too many distinct distances for the filtration key")
    top = count_simplices(D, threshold, max_dim)
    if top * _BYTES_PER_SIMPLEX > memory_budget:
        raise CapacityError(
            f"~{top} {max_dim}-simplices need about {top * _BYTES_PER_SIMPLEX / 1e9:.2f} GB "
            f"(budget {memory_budget / 1e9:.2f} GB); lower the threshold or subsample")

    R = np.searchsorted(values, D).astype(np.int32)
    np.fill_diagonal(R, 0)
    limit = int(np.searchsorted(values, threshold, side="right")) - 1

    kernel = _KERNELS[backend or BACKEND]
    pairs = kernel(np.ascontiguousarray(R), limit, max_dim, field_char)

    rows = []
    for dim, dim_pairs in enumerate(pairs):
        for b, d in dim_pairs:
            birth = 0.0 if dim == 0 else float(values[b])
            death = np.inf if d < 0 else float(values[d])
            if death > birth:
                rows.append((birth, death, dim))
    return PersistenceDiagram(np.array(rows, dtype=float).reshape(-1, 3), field_char)


def rips_ph_points(points, **kwargs) -> PersistenceDiagram:
    return rips_ph(distance_matrix(points), **kwargs)
