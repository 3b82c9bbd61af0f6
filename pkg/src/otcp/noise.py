"""Synthetic corruption of sparse count tensors.

Both injectors perturb only zero cells: a budget of ``min(nnz, #zeros)``
candidate cells is drawn uniformly from the zero set by reservoir sampling
(no materialization of the zero set), then each candidate is corrupted
independently with probability ``p``.  All randomness comes from one seeded
generator consumed in a fixed order, so results are reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .tensors import SparseTensor


def _zero_cell_sample(tensor, count, rng) -> np.ndarray:
    """Uniform sample of ``count`` distinct zero cells as linear indices."""
    total = int(np.prod(tensor.shape))
    occupied = set(
        np.ravel_multi_index(tuple(tensor.coords.T), tensor.shape).tolist())
    reservoir = np.empty(count, dtype=np.int64)
    seen = 0
    for lin in range(total):
        if lin in occupied:
            continue
        if seen < count:
            reservoir[seen] = lin
        else:
            slot = int(rng.integers(0, seen + 1))
            if slot < count:
                reservoir[slot] = lin
        seen += 1
    return reservoir


def _with_new_entries(tensor, cells, values) -> SparseTensor:
    added = np.stack(np.unravel_index(cells, tensor.shape), axis=1)
    coords = np.vstack([tensor.coords, added])
    vals = np.concatenate([tensor.values, values])
    return SparseTensor(tensor.shape, coords, vals)


def inject_noise_bernoulli(tensor, p, seed) -> SparseTensor:
    """Flip sampled zero cells of a binary tensor to one with probability ``p``."""
    if not 0 <= p <= 1:
        raise DataError(f"p must be in [0, 1], got {p}")
    if not np.all(tensor.values == 1.0):
        raise DataError("bernoulli noise requires a binary tensor")
    rng = np.random.default_rng(seed)
    budget = min(tensor.nnz, int(np.prod(tensor.shape)) - tensor.nnz)
    if budget == 0:
        return SparseTensor(tensor.shape, tensor.coords, tensor.values)
    cells = _zero_cell_sample(tensor, budget, rng)
    flips = rng.random(budget) < p
    chosen = cells[flips]
    if chosen.size == 0:
        return SparseTensor(tensor.shape, tensor.coords, tensor.values)
    return _with_new_entries(tensor, chosen, np.ones(chosen.size))


def inject_noise_poisson(tensor, p, seed) -> SparseTensor:
    """Fill sampled zero cells of a count tensor with uniform counts.

    Each corrupted cell receives an integer drawn uniformly from
    ``[1, max_count]`` where ``max_count`` is the largest count present.
    """
    if not 0 <= p <= 1:
        raise DataError(f"p must be in [0, 1], got {p}")
    if tensor.nnz == 0:
        raise DataError("poisson noise requires a nonempty tensor")
    if not np.all(tensor.values == np.round(tensor.values)):
        raise DataError("poisson noise requires integer counts")
    vmax = int(tensor.values.max())
    rng = np.random.default_rng(seed)
    budget = min(tensor.nnz, int(np.prod(tensor.shape)) - tensor.nnz)
    if budget == 0:
        return SparseTensor(tensor.shape, tensor.coords, tensor.values)
    cells = _zero_cell_sample(tensor, budget, rng)
    flips = rng.random(budget) < p
    chosen = cells[flips]
    if chosen.size == 0:
        return SparseTensor(tensor.shape, tensor.coords, tensor.values)
    draws = rng.integers(1, vmax + 1, size=chosen.size).astype(np.float64)
    return _with_new_entries(tensor, chosen, draws)
