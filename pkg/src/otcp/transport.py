"""Optimal-transport kernel: Gibbs kernels, batched scalings, exact solver.

The batched path never materializes transport plans.  A plan for column
``j`` is represented by its scaling vectors ``(u_j, v_j)`` against a shared
kernel ``K``, i.e. ``T_j = diag(u_j) K diag(v_j)``; its marginals have the
closed forms ``u_j * (K v_j)`` and ``v_j * (K^T u_j)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from ._kernels import get_kernel, resolve_threads
from .errors import DataError, DivergenceError

# Floors shared across the transport stack.  KERNEL_FLOOR keeps Gibbs kernel
# entries positive after exp underflow; EPS_DIV floors denominators so that
# 0/0 resolves to 0 without branching.
KERNEL_FLOOR = 1e-300
EPS_DIV = 1e-300

# The exact solver is for oracle-scale problems only.
MAX_EXACT_DIM = 64

# Relative slack allowed between the two masses of a balanced problem.
BALANCE_RTOL = 1e-9


@dataclass
class CostModel:
    """Ground cost matrix with its Gibbs kernel ``K = exp(-rho * C - 1)``."""

    cost: np.ndarray
    rho: float
    kernel: np.ndarray = field(repr=False)
    mode: int | None = None
    floor: float = KERNEL_FLOOR

    @property
    def dim(self) -> int:
        return self.cost.shape[0]


def validate_cost_matrix(cost) -> np.ndarray:
    """Check a ground cost: square, finite, symmetric, zero diagonal,
    nonnegative off-diagonal."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DataError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise DataError("cost matrix has non-finite entries")
    if not np.array_equal(cost, cost.T):
        raise DataError("cost matrix is not symmetric")
    if np.diagonal(cost).any():
        raise DataError("cost matrix diagonal must be zero")
    if (cost < 0).any():
        raise DataError("cost matrix has negative off-diagonal entries")
    return cost


def build_kernel(cost, rho, mode=None, floor=KERNEL_FLOOR) -> CostModel:
    """Validate ``cost`` and attach its Gibbs kernel for sharpness ``rho``.

    Kernel entries lie in ``(0, e^-1]``: the diagonal hits ``e^-1`` and
    underflow is clamped at ``floor`` so scalings never divide by zero.
    """
    cost = validate_cost_matrix(cost)
    if not rho > 0:
        raise DataError(f"rho must be positive, got {rho}")
    kernel = np.exp(-rho * cost - 1.0)
    np.maximum(kernel, floor, out=kernel)
    return CostModel(cost=cost, rho=float(rho), kernel=kernel, mode=mode, floor=floor)


@dataclass
class TransportScalings:
    """Per-column scaling vectors for one mode's batch of transport problems.

    ``u`` and ``v`` are ``(I_n, len(columns))``; column ``k`` scales the
    shared kernel into the plan for unfolding column ``columns[k]``.
    Treated as a value: updates return a fresh instance.
    """

    mode: int
    columns: np.ndarray
    u: np.ndarray
    v: np.ndarray
    phi: float

    @property
    def n_columns(self) -> int:
        return self.columns.shape[0]

    def validate(self):
        if self.u.shape != self.v.shape or self.u.shape[1] != self.n_columns:
            raise DataError("scaling arrays misaligned with columns")
        for name, arr in (("u", self.u), ("v", self.v)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite entries in {name}")
            if (arr < 0).any():
                raise DataError(f"negative entries in {name}")
        return self


def update_scalings(view, xhat_cols, model, phi, rounds=25, scalings=None,
                    columns=None, kernel=None, parallel=True,
                    eps_div=EPS_DIV) -> TransportScalings:
    """Run ``rounds`` alternating scaling updates for one mode's columns.

    Parameters
    ----------
    view : MatricizedView
        Sparse unfolding supplying the data-side column marginals.
    xhat_cols : (I_n, J) array
        Reconstruction-side marginals for the selected columns.
    model : CostModel
        Shared kernel for every column of this mode.
    phi : float
        Marginal relaxation exponent in ``(0, 1]``; ``1`` is the balanced
        limit and is honored exactly.
    scalings : TransportScalings, optional
        Warm start; when omitted ``u`` starts at all ones.
    columns : array, optional
        Sorted column indices to solve; defaults to the view's nonzero
        columns.  Zero columns are legal and yield zero plans.
    kernel : str or callable, optional
        Scaling kernel override (``"python"`` / ``"compiled"``).
    """
    if not 0 < phi <= 1:
        raise DataError(f"phi must be in (0, 1], got {phi}")
    if columns is None:
        columns = view.nonzero_columns
    columns = np.asarray(columns, dtype=np.int64)
    xhat_cols = np.asarray(xhat_cols, dtype=np.float64)
    if xhat_cols.shape != (view.n_rows, columns.shape[0]):
        raise DataError(
            f"xhat_cols shape {xhat_cols.shape} does not match "
            f"({view.n_rows}, {columns.shape[0]})"
        )
    if model.dim != view.n_rows:
        raise DataError(
            f"cost model dimension {model.dim} does not match mode extent {view.n_rows}"
        )
    x_cols = view.dense_columns(columns)
    if scalings is not None:
        if scalings.u.shape != x_cols.shape or not np.array_equal(scalings.columns, columns):
            raise DataError("warm-start scalings do not match the requested columns")
        u0 = scalings.u
    else:
        u0 = np.ones_like(x_cols)
    impl = kernel if callable(kernel) else get_kernel(kernel)
    threads = resolve_threads(parallel)
    try:
        u, v = impl(x_cols, xhat_cols, model.kernel, phi, rounds, u0, eps_div, threads)
    except DivergenceError as err:
        raise DivergenceError(f"mode {view.mode}: {err}") from None
    return TransportScalings(mode=view.mode, columns=columns, u=u, v=v, phi=phi)


def row_marginals(scalings, model) -> np.ndarray:
    """Row marginals ``u_j * (K v_j)`` of every column's plan, as columns."""
    return scalings.u * (model.kernel @ scalings.v)


def col_marginals(scalings, model) -> np.ndarray:
    """Column marginals ``v_j * (K^T u_j)`` of every column's plan."""
    return scalings.v * (model.kernel.T @ scalings.u)


def embed_columns(cols_matrix, columns, n_cols) -> np.ndarray:
    """Zero-fill a per-selected-column matrix back to the full unfolding width."""
    out = np.zeros((cols_matrix.shape[0], n_cols))
    out[:, columns] = cols_matrix
    return out


def transport_plan(scalings, model, k) -> np.ndarray:
    """Materialize the plan of the ``k``-th solved column, ``diag(u) K diag(v)``."""
    return scalings.u[:, k, None] * model.kernel * scalings.v[None, :, k]


@dataclass
class ExplicitTransport:
    """A materialized plan with its linear cost and entropy."""

    plan: np.ndarray
    cost: float
    entropy: float


def _check_balanced(a, b) -> None:
    sa, sb = float(a.sum()), float(b.sum())
    if abs(sa - sb) > BALANCE_RTOL * max(1.0, abs(sa), abs(sb)):
        raise DataError(f"unbalanced marginals: masses {sa!r} vs {sb!r}")


def _validate_marginal(a, dim, name) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1)
    if a.shape[0] != dim:
        raise DataError(f"{name} has length {a.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} has non-finite entries")
    if (a < 0).any():
        raise DataError(f"{name} has negative entries")
    return a


def exact_ot(a, b, cost) -> ExplicitTransport:
    """Solve a single balanced transport problem exactly.

    Runs the transportation simplex, pivoting across spanning-tree basic
    feasible solutions of the transportation polytope, with Bland's rule so
    degenerate pivots cannot cycle.  Zero marginal entries are dropped first;
    intended for small (oracle-scale) problems only.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise DataError("cost must be a matrix")
    a = _validate_marginal(a, cost.shape[0], "a")
    b = _validate_marginal(b, cost.shape[1], "b")
    if max(cost.shape) > MAX_EXACT_DIM:
        raise DataError(
            f"dimension {max(cost.shape)} too large for the exact solver "
            f"(cap {MAX_EXACT_DIM})"
        )
    _check_balanced(a, b)
    plan = np.zeros(cost.shape)
    ia = np.flatnonzero(a > 0)
    ib = np.flatnonzero(b > 0)
    if ia.size == 0 or ib.size == 0:
        # total mass is below the balance tolerance; nothing to move
        return ExplicitTransport(plan=plan, cost=0.0, entropy=0.0)
    ar = a[ia]
    br = b[ib] * (ar.sum() / b[ib].sum())  # force exact balance
    sub = _transport_simplex(ar, br, cost[np.ix_(ia, ib)])
    plan[np.ix_(ia, ib)] = sub
    value = float((cost * plan).sum())
    ent = float(-xlogy(plan, plan).sum())
    return ExplicitTransport(plan=plan, cost=value, entropy=ent)


def _northwest_corner(a, b):
    """Initial spanning-tree basis and flows for the transportation simplex."""
    m, n = a.shape[0], b.shape[0]
    flow = np.zeros((m, n))
    basis = []
    ra, rb = a.copy(), b.copy()
    i = j = 0
    while True:
        t = min(ra[i], rb[j])
        flow[i, j] = t
        basis.append((i, j))
        ra[i] -= t
        rb[j] -= t
        if i == m - 1 and j == n - 1:
            break
        if ra[i] <= rb[j] and i < m - 1:
            i += 1
        elif j < n - 1:
            j += 1
        else:
            i += 1
    return flow, basis


def _tree_duals(basis, cost, m, n):
    """Dual potentials from the basis tree, anchored at u[0] = 0."""
    adj = {("r", i): [] for i in range(m)}
    adj.update({("c", j): [] for j in range(n)})
    for (i, j) in basis:
        adj[("r", i)].append(("c", j))
        adj[("c", j)].append(("r", i))
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    stack = [("r", 0)]
    while stack:
        kind, idx = stack.pop()
        for nkind, nidx in adj[(kind, idx)]:
            if nkind == "c" and np.isnan(v[nidx]):
                v[nidx] = cost[idx, nidx] - u[idx]
                stack.append((nkind, nidx))
            elif nkind == "r" and np.isnan(u[nidx]):
                u[nidx] = cost[nidx, idx] - v[idx]
                stack.append((nkind, nidx))
    return u, v


def _tree_path(basis, start, goal):
    """Node path from ``start`` to ``goal`` inside the basis tree."""
    adj = {}
    for (i, j) in basis:
        adj.setdefault(("r", i), []).append(("c", j))
        adj.setdefault(("c", j), []).append(("r", i))
    prev = {start: None}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for nxt in adj.get(node, ()):
            if nxt not in prev:
                prev[nxt] = node
                stack.append(nxt)
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    return path[::-1]


def _transport_simplex(a, b, cost, max_pivots=10000):
    """Bland-rule transportation simplex on strictly positive marginals."""
    m, n = a.shape[0], b.shape[0]
    if m == 1:
        return b.reshape(1, -1).copy()
    if n == 1:
        return a.reshape(-1, 1).copy()
    flow, basis = _northwest_corner(a, b)
    basis_set = set(basis)
    tol = 1e-12 * max(1.0, float(np.abs(cost).max()))
    for _ in range(max_pivots):
        u, v = _tree_duals(basis, cost, m, n)
        reduced = cost - u[:, None] - v[None, :]
        for (i, j) in basis:
            reduced[i, j] = 0.0
        flat = np.flatnonzero(reduced.ravel() < -tol)
        if flat.size == 0:
            return flow
        ei, ej = divmod(int(flat[0]), n)  # Bland: first improving cell
        path = _tree_path(basis, ("r", ei), ("c", ej))
        cycle = [(ei, ej)]
        for k in range(len(path) - 1):
            pair = (path[k], path[k + 1])
            cell = (
                (pair[0][1], pair[1][1]) if pair[0][0] == "r" else (pair[1][1], pair[0][1])
            )
            cycle.append(cell)
        minus = cycle[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min(c for c in minus if flow[c] == theta)
        for k, cell in enumerate(cycle):
            flow[cell] += theta if k % 2 == 0 else -theta
        flow[leaving] = 0.0
        basis_set.discard(leaving)
        basis_set.add((ei, ej))
        basis = sorted(basis_set)
    raise RuntimeError("transportation simplex did not terminate")


def entropic_ot_cost(a, b, model, iters=1000) -> float:
    """Entropy-regularized transport value via balanced Sinkhorn iterations.

    Returns ``<C, T> - entropy(T) / rho`` at the final iterate.  The
    marginals must be balanced; zero entries are carried through as exact
    zeros in the scalings.
    """
    a = _validate_marginal(a, model.dim, "a")
    b = _validate_marginal(b, model.dim, "b")
    if iters < 1:
        raise DataError(f"iters must be positive, got {iters}")
    _check_balanced(a, b)
    if a.sum() == 0:
        return 0.0
    kernel = model.kernel
    v = np.ones_like(b)
    for _ in range(iters):
        u = a / np.maximum(kernel @ v, EPS_DIV)
        v = b / np.maximum(kernel.T @ u, EPS_DIV)
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise DivergenceError("sinkhorn scalings diverged")
    plan = u[:, None] * kernel * v[None, :]
    value = float((model.cost * plan).sum())
    ent = float(-xlogy(plan, plan).sum())
    return value - ent / model.rho
