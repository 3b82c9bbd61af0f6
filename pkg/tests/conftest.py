"""Shared fixtures and independent oracle implementations.

The oracles here deliberately avoid the library's own code paths: dense
unfoldings via axis moves, Khatri-Rao via per-column Kronecker chains, CP
reconstruction via explicit outer products, and exact transport via
exhaustive enumeration of spanning-tree basic solutions or an LP solve.
"""

import itertools
from functools import reduce

import numpy as np
import pytest
from scipy.optimize import linprog

from otcp import SparseTensor


def random_sparse(rng, shape, density=0.5, low=0.5, high=1.5) -> SparseTensor:
    """Random sparse tensor; guaranteed at least one entry."""
    total = int(np.prod(shape))
    n_cells = max(1, int(round(density * total)))
    cells = rng.choice(total, size=n_cells, replace=False)
    coords = np.stack(np.unravel_index(cells, shape), axis=1)
    values = rng.uniform(low, high, size=n_cells)
    return SparseTensor(shape, coords, values)


def dense_unfold(dense, mode) -> np.ndarray:
    """Reference mode unfolding of a dense array."""
    moved = np.moveaxis(dense, mode, 0)
    return moved.reshape((dense.shape[mode], -1), order="F")


def kr_oracle(mats) -> np.ndarray:
    """Column-by-column Kronecker chain, last matrix fastest."""
    rank = mats[0].shape[1]
    cols = []
    for r in range(rank):
        cols.append(reduce(np.kron, [m[:, r] for m in mats]))
    return np.stack(cols, axis=1)


def cp_dense(factors) -> np.ndarray:
    """Dense CP reconstruction as an explicit sum of outer products."""
    rank = factors[0].shape[1]
    out = np.zeros(tuple(f.shape[0] for f in factors))
    for r in range(rank):
        out += reduce(np.multiply.outer, [f[:, r] for f in factors])
    return out


def linprog_ot(a, b, cost) -> float:
    """Exact transport value via scipy's LP solver."""
    m, n = cost.shape
    rows = []
    for i in range(m):
        e = np.zeros((m, n))
        e[i, :] = 1
        rows.append(e.ravel())
    for j in range(n):
        e = np.zeros((m, n))
        e[:, j] = 1
        rows.append(e.ravel())
    res = linprog(cost.ravel(), A_eq=np.array(rows),
                  b_eq=np.concatenate([a, b]), method="highs")
    assert res.status == 0, res.message
    return float(res.fun)


def enumerate_tree_ot(a, b, cost):
    """Minimum cost over every spanning-tree basic feasible solution.

    Feasible only for tiny instances: walks all edge subsets of size
    m + n - 1, keeps the ones forming a spanning tree of the bipartite
    support graph, solves the (unique) flows by leaf elimination, and
    scores the nonnegative ones.
    """
    m, n = cost.shape
    edges = list(itertools.product(range(m), range(n)))
    best = np.inf
    for subset in itertools.combinations(edges, m + n - 1):
        deg = {}
        for (i, j) in subset:
            deg.setdefault(("r", i), []).append(("c", j))
            deg.setdefault(("c", j), []).append(("r", i))
        if len(deg) != m + n:
            continue
        # connectivity of m + n nodes with m + n - 1 edges => tree
        seen = {("r", 0)}
        stack = [("r", 0)]
        while stack:
            node = stack.pop()
            for nxt in deg[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if len(seen) != m + n:
            continue
        # peel leaves to solve the flows
        flows = {}
        need = {("r", i): a[i] for i in range(m)}
        need.update({("c", j): b[j] for j in range(n)})
        remaining = {node: set(neigh) for node, neigh in deg.items()}
        active = [e for e in subset]
        ok = True
        while active:
            leaf = None
            for node, neigh in remaining.items():
                if len(neigh) == 1:
                    leaf = node
                    break
            other = next(iter(remaining[leaf]))
            edge = ((leaf[1], other[1]) if leaf[0] == "r" else (other[1], leaf[1]))
            f = need[leaf]
            if f < -1e-12:
                ok = False
                break
            flows[edge] = f
            need[other] -= f
            need[leaf] = 0.0
            remaining[other].discard(leaf)
            del remaining[leaf]
            active.remove(edge)
        if not ok:
            continue
        if any(f < -1e-12 for f in flows.values()):
            continue
        val = sum(cost[i, j] * f for (i, j), f in flows.items())
        best = min(best, val)
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
