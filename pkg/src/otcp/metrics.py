"""Distances between tensors and basic information-theoretic helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .errors import DataError
from .tensors import matricize
from .transport import entropic_ot_cost, exact_ot

# Paired columns whose masses differ by more than this (relative) are
# rejected in exact mode.
COLUMN_BALANCE_RTOL = 1e-9


def entropy(plan) -> float:
    """Shannon entropy ``-sum T log T`` with ``0 log 0 = 0``."""
    plan = np.asarray(plan, dtype=np.float64)
    if (plan < 0).any():
        raise DataError("entropy requires nonnegative entries")
    return float(-xlogy(plan, plan).sum())


def generalized_kl(a, b) -> float:
    """Generalized KL divergence ``sum a log(a/b) - a + b`` for nonnegative
    arrays, with ``0 log 0 = 0``.

    Errors where ``a`` carries mass but ``b`` does not: the divergence is
    infinite there and almost always indicates a modeling bug.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch {a.shape} vs {b.shape}")
    if (a < 0).any() or (b < 0).any():
        raise DataError("generalized_kl requires nonnegative entries")
    if np.logical_and(a > 0, b == 0).any():
        raise DataError("positive mass where the reference is zero")
    val = float((xlogy(a, a) - xlogy(a, b) - a + b).sum())
    return val


def _normalize_columns(mat) -> np.ndarray:
    sums = mat.sum(axis=0)
    out = mat.copy()
    nz = sums > 0
    out[:, nz] /= sums[nz]
    return out


def wasserstein_matrix(a_mat, b_mat, model, mode="exact", sinkhorn_iters=1000,
                       normalize=False) -> float:
    """Sum of per-column transport distances between paired columns.

    Column pairs that are both zero are skipped.  In exact mode a zero
    column paired with a nonzero one, or an unbalanced pair, is an error;
    results are symmetric in the two arguments bit-for-bit because each
    pair is canonically ordered before solving (legitimate since the cost
    is symmetric).
    """
    a_mat = np.asarray(a_mat, dtype=np.float64)
    b_mat = np.asarray(b_mat, dtype=np.float64)
    if a_mat.shape != b_mat.shape:
        raise DataError(f"shape mismatch {a_mat.shape} vs {b_mat.shape}")
    if a_mat.shape[0] != model.dim:
        raise DataError(
            f"rows {a_mat.shape[0]} do not match cost dimension {model.dim}"
        )
    if mode not in ("exact", "entropic"):
        raise DataError(f"unknown mode {mode!r}")
    if normalize:
        a_mat = _normalize_columns(a_mat)
        b_mat = _normalize_columns(b_mat)
    total = 0.0
    for j in range(a_mat.shape[1]):
        a = a_mat[:, j]
        b = b_mat[:, j]
        a_zero = not a.any()
        b_zero = not b.any()
        if a_zero and b_zero:
            continue
        if a_zero != b_zero:
            raise DataError(f"column {j}: zero column paired with a nonzero one")
        if mode == "exact":
            sa, sb = float(a.sum()), float(b.sum())
            if abs(sa - sb) > COLUMN_BALANCE_RTOL * max(1.0, sa, sb):
                raise DataError(
                    f"column {j}: unbalanced pair (masses {sa!r} vs {sb!r})"
                )
            if tuple(b) < tuple(a):
                a, b = b, a
            total += exact_ot(a, b, model.cost).cost
        else:
            total += entropic_ot_cost(a, b, model, iters=sinkhorn_iters)
    return total


@dataclass
class DistanceReport:
    """Tensor distance broken down by mode."""

    per_mode: list
    total: float
    mode: str
    normalized: bool

    @property
    def regularized(self) -> bool:
        return self.mode == "entropic"


def wasserstein_tensor(x, y, models, mode="exact", sinkhorn_iters=1000,
                       normalize=False) -> DistanceReport:
    """Sum the per-mode matrix distances between two same-shaped tensors.

    ``models`` supplies one cost model per mode, shared by both tensors.
    """
    if x.shape != y.shape:
        raise DataError(f"shape mismatch {x.shape} vs {y.shape}")
    if len(models) != x.ndim:
        raise DataError(f"{len(models)} cost models for an order-{x.ndim} tensor")
    per_mode = []
    for n in range(x.ndim):
        a_mat = matricize(x, n).dense()
        b_mat = matricize(y, n).dense()
        per_mode.append(
            wasserstein_matrix(a_mat, b_mat, models[n], mode=mode,
                               sinkhorn_iters=sinkhorn_iters, normalize=normalize)
        )
    return DistanceReport(per_mode=per_mode, total=float(sum(per_mode)),
                          mode=mode, normalized=normalize)


def reconstruction_error(tensor, factors) -> float:
    """Relative Frobenius error ``||X - Xhat||_F / ||X||_F`` without
    densifying the reconstruction."""
    mats = factors.factors if hasattr(factors, "factors") else list(factors)
    if len(mats) != tensor.ndim:
        raise DataError(f"{len(mats)} factors for an order-{tensor.ndim} tensor")
    rank = mats[0].shape[1]
    # <X, Xhat>: evaluate the reconstruction only at stored coordinates
    prod = np.ones((tensor.nnz, rank))
    for n, mat in enumerate(mats):
        prod *= mat[tensor.coords[:, n], :]
    inner = float((prod.sum(axis=1) * tensor.values).sum())
    # ||Xhat||^2 via the Hadamard product of Gram matrices
    gram = np.ones((rank, rank))
    for mat in mats:
        gram *= mat.T @ mat
    xhat_sq = float(gram.sum())
    x_sq = float((tensor.values ** 2).sum())
    if x_sq == 0:
        raise DataError("empty tensor has no relative error")
    err_sq = max(x_sq - 2.0 * inner + xhat_sq, 0.0)
    return float(np.sqrt(err_sq) / np.sqrt(x_sq))
