"""Ground cost constructions for the per-mode transport problems."""

from __future__ import annotations

import numpy as np
from scipy.sparse.csgraph import floyd_warshall

from .errors import DataError
from .tensors import matricize


def build_cost_cosine(tensor, mode) -> np.ndarray:
    """Cosine distance between mode slices, read off the mode unfolding.

    Slice ``i``'s feature vector is row ``i`` of the mode-``mode``
    unfolding.  Empty slices get unit distance to every other slice (and to
    other empty ones); the diagonal is exactly zero and the matrix exactly
    symmetric.
    """
    view = matricize(tensor, mode)
    feats = view.dense_columns(view.nonzero_columns)
    gram = feats @ feats.T
    norms = np.sqrt(np.diagonal(gram))
    cost = np.ones_like(gram)
    nz = norms > 0
    sub = np.ix_(nz, nz)
    cost[sub] = 1.0 - gram[sub] / np.outer(norms[nz], norms[nz])
    cost = 0.5 * (cost + cost.T)
    np.clip(cost, 0.0, None, out=cost)
    np.fill_diagonal(cost, 0.0)
    return cost


def build_cost_identity(dim) -> np.ndarray:
    """Unit cost everywhere off the (zero) diagonal."""
    if dim < 1:
        raise DataError(f"dimension must be positive, got {dim}")
    return np.ones((dim, dim)) - np.eye(dim)


def build_cost_random(dim, seed) -> np.ndarray:
    """Random symmetric costs repaired to satisfy the triangle inequality.

    Off-diagonal entries are drawn uniformly on ``(0, 1]`` and then replaced
    by their all-pairs shortest-path closure, so the result is a genuine
    semimetric whatever the draw.
    """
    if dim < 1:
        raise DataError(f"dimension must be positive, got {dim}")
    rng = np.random.default_rng(seed)
    draw = 1.0 - rng.random((dim, dim))
    cost = np.triu(draw, 1)
    cost = cost + cost.T
    if dim > 1:
        cost = floyd_warshall(cost, directed=False)
        cost = np.minimum(cost, cost.T)
    np.fill_diagonal(cost, 0.0)
    return np.ascontiguousarray(cost)


def build_mode_costs(tensor, kind, seed=0) -> list:
    """One cost matrix per mode of ``tensor`` for a named construction."""
    if kind == "cosine":
        return [build_cost_cosine(tensor, n) for n in range(tensor.ndim)]
    if kind == "identity":
        return [build_cost_identity(s) for s in tensor.shape]
    if kind == "random":
        return [build_cost_random(s, (seed, n)) for n, s in enumerate(tensor.shape)]
    raise DataError(f"unknown cost kind {kind!r}")
