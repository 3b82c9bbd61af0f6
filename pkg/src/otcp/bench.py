"""Timing harnesses: zero-column dropping and compiled-vs-python kernels."""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from ._kernels import available_kernels
from .costs import build_cost_identity
from .solver import SolverConfig, fit
from .tensors import SparseTensor, cp_reconstruct_columns, matricize
from .transport import build_kernel, update_scalings


def make_random_tensor(shape, n_cells, seed, low=0.5, high=1.5) -> SparseTensor:
    """Uniform random sparse tensor with exactly ``n_cells`` stored entries."""
    rng = np.random.default_rng(seed)
    total = int(np.prod(shape))
    n_cells = min(n_cells, total)
    cells = rng.choice(total, size=n_cells, replace=False)
    coords = np.stack(np.unravel_index(cells, shape), axis=1)
    values = rng.uniform(low, high, size=n_cells)
    return SparseTensor(shape, coords, values)


def cells_for_column_density(shape, density) -> int:
    """Cell count whose uniform placement hits ``density`` nonzero columns
    per unfolding, on average across modes."""
    if density >= 1.0:
        return int(np.prod(shape))
    total = int(np.prod(shape))
    counts = []
    for n in range(len(shape)):
        n_cols = total // shape[n]
        # P(column nonzero) = 1 - (1 - 1/n_cols)^m  =>  solve for m
        counts.append(np.log1p(-density) / np.log1p(-1.0 / n_cols))
    return max(1, int(round(float(np.mean(counts)))))


def _time_ot_sweep(tensor, models, factors, phi, rounds, columns, kernel,
                   parallel, repeats) -> float:
    views = [matricize(tensor, n) for n in range(tensor.ndim)]
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for n in range(tensor.ndim):
            xhat = cp_reconstruct_columns(factors, n, columns[n])
            update_scalings(views[n], xhat, models[n], phi, rounds=rounds,
                            columns=columns[n], kernel=kernel, parallel=parallel)
        best = min(best, time.perf_counter() - t0)
    return float(best)


def benchmark_sparsity(shape, densities, rank=5, sinkhorn_iters=25, rho=50.0,
                       lam=1.0, seed=0, repeats=3, fit_iters=3,
                       kernel=None) -> list:
    """Time one OT sweep with zero columns dropped vs kept, per density.

    Also runs a short fit both ways and reports the largest factor entry
    difference, which should sit at rounding level: dropping is exact.
    """
    rows = []
    config = SolverConfig(rank=rank, rho=rho, lam=lam, outer_iters=fit_iters,
                          sinkhorn_iters=sinkhorn_iters, seed=seed, kernel=kernel)
    for density in densities:
        tensor = make_random_tensor(shape, cells_for_column_density(shape, density),
                                    seed=seed)
        models = [build_kernel(build_cost_identity(s), rho, mode=n)
                  for n, s in enumerate(tensor.shape)]
        views = [matricize(tensor, n) for n in range(tensor.ndim)]
        rng = np.random.default_rng(seed)
        factors = [rng.uniform(0.1, 1.1, size=(s, rank)) for s in tensor.shape]
        dropped_cols = [v.nonzero_columns for v in views]
        full_cols = [np.arange(v.n_cols, dtype=np.int64) for v in views]
        dropped = _time_ot_sweep(tensor, models, factors, config.phi,
                                 sinkhorn_iters, dropped_cols, kernel, True, repeats)
        full = _time_ot_sweep(tensor, models, factors, config.phi,
                              sinkhorn_iters, full_cols, kernel, True, repeats)
        fit_dropped, _ = fit(tensor, models, config)
        keep_config = dataclasses.replace(config, drop_zero_columns=False)
        fit_full, _ = fit(tensor, models, keep_config)
        diff = max(
            float(np.abs(a - b).max())
            for a, b in zip(fit_dropped.factors, fit_full.factors))
        rows.append({
            "density": float(density),
            "nnz": tensor.nnz,
            "nonzero_columns": [int(v.nnz_columns) for v in views],
            "total_columns": [int(v.n_cols) for v in views],
            "dropped_seconds": dropped,
            "full_seconds": full,
            "speedup": full / dropped if dropped > 0 else float("inf"),
            "max_factor_diff": diff,
        })
    return rows


def benchmark_kernels(shape=(30, 30, 30), density=0.5, rank=5,
                      sinkhorn_iters=25, rho=50.0, seed=0, repeats=3) -> list:
    """Time one OT sweep per importable scaling kernel on the same problem."""
    tensor = make_random_tensor(shape, cells_for_column_density(shape, density),
                                seed=seed)
    models = [build_kernel(build_cost_identity(s), rho, mode=n)
              for n, s in enumerate(tensor.shape)]
    views = [matricize(tensor, n) for n in range(tensor.ndim)]
    rng = np.random.default_rng(seed)
    factors = [rng.uniform(0.1, 1.1, size=(s, rank)) for s in tensor.shape]
    columns = [v.nonzero_columns for v in views]
    phi = rho / (rho + 1.0)
    rows = []
    reference = None
    for name in available_kernels():
        seconds = _time_ot_sweep(tensor, models, factors, phi, sinkhorn_iters,
                                 columns, name, True, repeats)
        sc = update_scalings(views[0], cp_reconstruct_columns(factors, 0, columns[0]),
                             models[0], phi, rounds=sinkhorn_iters,
                             columns=columns[0], kernel=name)
        if reference is None:
            reference = sc.u
            agreement = 0.0
        else:
            denom = max(float(np.abs(reference).max()), 1e-300)
            agreement = float(np.abs(sc.u - reference).max()) / denom
        rows.append({"kernel": name, "seconds": seconds,
                     "max_rel_diff_vs_first": agreement})
    if len(rows) == 2:
        rows[1]["speedup_vs_first"] = rows[0]["seconds"] / rows[1]["seconds"]
    return rows
