"""Sparse tensor container and the multilinear algebra used by the solver.

Conventions, fixed once here and relied on everywhere else:

* Coordinates are 0-based.  A tensor of order ``N`` has shape
  ``(I_0, ..., I_{N-1})``.
* The mode-``n`` unfolding maps entry ``(i_0, ..., i_{N-1})`` to row ``i_n``
  and column ``j = sum_{k != n} i_k * prod_{m < k, m != n} I_m``, i.e. the
  smallest remaining mode index varies fastest along columns.
* ``khatri_rao_excluding(factors, n)`` follows the same ordering, so the
  mode-``n`` unfolding of the CP reconstruction is exactly
  ``factors[n] @ khatri_rao_excluding(factors, n).T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


class SparseTensor:
    """Coordinate-format sparse tensor with strictly positive entries.

    Entries are canonically sorted by linear index (first mode slowest), and
    duplicates are rejected.  Explicit zeros are never stored; absence means
    zero.

    Parameters
    ----------
    shape : tuple of int
        Extents ``(I_0, ..., I_{N-1})``, all positive, order at least 2.
    coords : (nnz, N) array of int
        One coordinate row per stored entry.
    values : (nnz,) array of float
        Strictly positive entry values, aligned with ``coords``.
    """

    def __init__(self, shape, coords, values):
        shape = tuple(int(s) for s in shape)
        if len(shape) < 2:
            raise DataError(f"tensor order must be at least 2, got {len(shape)}")
        if any(s < 1 for s in shape):
            raise DataError(f"extents must be positive, got {shape}")
        coords = np.ascontiguousarray(coords, dtype=np.int64).reshape(-1, len(shape))
        values = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
        if coords.shape[0] != values.shape[0]:
            raise DataError(
                f"{coords.shape[0]} coordinates but {values.shape[0]} values"
            )
        if coords.size and (coords.min() < 0 or (coords >= np.array(shape)).any()):
            raise DataError("coordinate out of range")
        if not np.all(np.isfinite(values)):
            raise DataError("non-finite entry value")
        if (values <= 0).any():
            bad = values[values <= 0][0]
            raise DataError(f"entry values must be strictly positive, got {bad!r}")
        order = np.lexsort(coords.T[::-1]) if coords.size else np.array([], dtype=np.int64)
        coords = coords[order]
        values = values[order]
        if coords.shape[0] > 1:
            dup = (np.diff(coords, axis=0) == 0).all(axis=1)
            if dup.any():
                where = coords[1:][dup][0]
                raise DataError(f"duplicate coordinate {tuple(where)}")
        self.shape = shape
        self.coords = coords
        self.values = values
        self.coords.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def nnz(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_dense(cls, array) -> "SparseTensor":
        array = np.asarray(array, dtype=np.float64)
        if (array < 0).any():
            raise DataError("dense tensor has negative entries")
        coords = np.argwhere(array != 0)
        values = array[array != 0]
        return cls(array.shape, coords, values)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[tuple(self.coords.T)] = self.values
        return out

    def total(self) -> float:
        """Sum of all entries (total mass)."""
        return float(self.values.sum())

    def __repr__(self) -> str:
        return f"SparseTensor(shape={self.shape}, nnz={self.nnz})"


def _column_strides(shape, mode) -> np.ndarray:
    """Stride of each non-``mode`` index in the unfolding column formula."""
    strides = np.ones(len(shape), dtype=np.int64)
    acc = 1
    for k in range(len(shape)):
        if k == mode:
            continue
        strides[k] = acc
        acc *= shape[k]
    return strides


@dataclass
class MatricizedView:
    """Sparse mode-``n`` unfolding of a tensor, with its nonzero columns.

    ``rows``/``cols``/``values`` are aligned per stored entry.  Zero columns
    carry no mass and are dropped from the transport step; ``nonzero_columns``
    lists the (sorted) surviving column indices.
    """

    mode: int
    shape: tuple
    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    nonzero_columns: np.ndarray = field(repr=False)

    @property
    def nnz(self) -> int:
        return self.values.shape[0]

    @property
    def nnz_columns(self) -> int:
        return self.nonzero_columns.shape[0]

    def dense(self) -> np.ndarray:
        """Full dense ``I_n x I_(-n)`` matrix, zero columns included."""
        out = np.zeros((self.n_rows, self.n_cols))
        out[self.rows, self.cols] = self.values
        return out

    def dense_columns(self, columns) -> np.ndarray:
        """Dense ``I_n x len(columns)`` block restricted to sorted ``columns``."""
        columns = np.asarray(columns, dtype=np.int64)
        out = np.zeros((self.n_rows, columns.shape[0]))
        if columns.size:
            pos = np.searchsorted(columns, self.cols)
            pos_c = np.minimum(pos, columns.shape[0] - 1)
            keep = columns[pos_c] == self.cols
            out[self.rows[keep], pos_c[keep]] = self.values[keep]
        return out

    def column_sums(self) -> np.ndarray:
        """Mass of each nonzero column, aligned with ``nonzero_columns``."""
        sums = np.zeros(self.n_cols)
        np.add.at(sums, self.cols, self.values)
        return sums[self.nonzero_columns]


def matricize(tensor: SparseTensor, mode: int) -> MatricizedView:
    """Unfold ``tensor`` along ``mode`` without densifying."""
    if not 0 <= mode < tensor.ndim:
        raise DataError(f"mode {mode} out of range for order {tensor.ndim}")
    strides = _column_strides(tensor.shape, mode)
    cols = tensor.coords @ strides - tensor.coords[:, mode] * strides[mode]
    rows = tensor.coords[:, mode].copy()
    n_cols = int(np.prod([s for k, s in enumerate(tensor.shape) if k != mode]))
    return MatricizedView(
        mode=mode,
        shape=tensor.shape,
        n_rows=tensor.shape[mode],
        n_cols=n_cols,
        rows=rows,
        cols=cols,
        values=tensor.values.copy(),
        nonzero_columns=np.unique(cols),
    )


def tensorize(view: MatricizedView) -> SparseTensor:
    """Invert :func:`matricize`; exact round trip."""
    shape = view.shape
    others = [k for k in range(len(shape)) if k != view.mode]
    coords = np.empty((view.nnz, len(shape)), dtype=np.int64)
    coords[:, view.mode] = view.rows
    rem = view.cols.copy()
    for k in others:
        coords[:, k] = rem % shape[k]
        rem //= shape[k]
    return SparseTensor(shape, coords, view.values)


def khatri_rao(*matrices) -> np.ndarray:
    """Column-wise Kronecker product; the last argument's index runs fastest."""
    if not matrices:
        raise ValueError("khatri_rao needs at least one matrix")
    rank = matrices[0].shape[1]
    if any(m.shape[1] != rank for m in matrices):
        raise DataError("khatri_rao operands must share their column count")
    out = matrices[0]
    for mat in matrices[1:]:
        # new rows = (slow index from `out`, fast index from `mat`)
        out = (out[:, None, :] * mat[None, :, :]).reshape(-1, rank)
    return out

def khatri_rao_excluding(factors, mode: int) -> np.ndarray:
    """Khatri-Rao product of all factors but ``factors[mode]``.

    Row ordering matches the unfolding column ordering: the smallest
    remaining mode index varies fastest.
    """
    others = [factors[k] for k in range(len(factors)) if k != mode]
    if not others:
        raise DataError("khatri_rao_excluding needs order >= 2")
    return khatri_rao(*others[::-1])


def cp_reconstruct_mode(factors, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of the CP reconstruction, ``A_n B^T``."""
    return factors[mode] @ khatri_rao_excluding(factors, mode).T


def cp_reconstruct_columns(factors, mode: int, columns) -> np.ndarray:
    """Selected columns of :func:`cp_reconstruct_mode`, computed directly."""
    return factors[mode] @ khatri_rao_excluding(factors, mode)[columns].T


def remap_unfolding(mat: np.ndarray, from_mode: int, to_mode: int, shape) -> np.ndarray:
    """Re-express a mode-``from_mode`` unfolding as the mode-``to_mode`` one.

    Both matrices are unfoldings of the same underlying tensor, so chaining
    remaps composes and ``from_mode == to_mode`` is the identity.
    """
    shape = tuple(int(s) for s in shape)
    n_modes = len(shape)
    if not 0 <= from_mode < n_modes or not 0 <= to_mode < n_modes:
        raise DataError(
            f"modes ({from_mode}, {to_mode}) out of range for order {n_modes}"
        )
    if mat.shape[0] != shape[from_mode]:
        raise DataError(
            f"unfolding has {mat.shape[0]} rows, expected {shape[from_mode]}"
        )
    if from_mode == to_mode:
        return mat
    others = [k for k in range(n_modes) if k != from_mode]
    cube = mat.reshape((shape[from_mode],) + tuple(shape[k] for k in others), order="F")
    axis_of = {k: a + 1 for a, k in enumerate(others)}
    axis_of[from_mode] = 0
    perm = [axis_of[to_mode]] + [axis_of[k] for k in range(n_modes) if k != to_mode]
    return np.transpose(cube, perm).reshape((shape[to_mode], -1), order="F")


@dataclass
class FactorSet:
    """CP factor matrices, one ``I_n x R`` nonnegative matrix per mode."""

    rank: int
    factors: list

    def __post_init__(self):
        if self.rank < 1:
            raise DataError(f"rank must be positive, got {self.rank}")
        if len(self.factors) < 2:
            raise DataError("a factor set needs at least two modes")
        self.factors = [np.ascontiguousarray(f, dtype=np.float64) for f in self.factors]
        for k, f in enumerate(self.factors):
            if f.ndim != 2 or f.shape[1] != self.rank:
                raise DataError(f"factor {k} has shape {f.shape}, expected (*, {self.rank})")
            if not np.all(np.isfinite(f)):
                raise DataError(f"factor {k} has non-finite entries")
            if (f < 0).any():
                raise DataError(f"factor {k} has negative entries")

    @property
    def ndim(self) -> int:
        return len(self.factors)

    @property
    def shape(self) -> tuple:
        return tuple(f.shape[0] for f in self.factors)

    def __getitem__(self, mode: int) -> np.ndarray:
        return self.factors[mode]

    def to_dense(self) -> np.ndarray:
        """Dense reconstruction; intended for small tensors only."""
        mat = cp_reconstruct_mode(self.factors, 0)
        others = self.shape[1:]
        cube = mat.reshape((self.shape[0],) + tuple(others), order="F")
        return cube
