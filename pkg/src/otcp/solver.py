"""Block-coordinate solver for transport-regularized CP factorization.

Each outer iteration has two phases.  The transport phase refreshes, per
mode, the batched scalings between the data columns and the current
reconstruction columns (zero columns are dropped; their plans are zero).
The factor phase then applies a multiplicative update to each factor in
turn, holding the plans fixed.  Both phases decrease the tracked objective,
so with warm starts the objective is non-increasing across iterations.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .errors import DataError, DivergenceError
from .metrics import generalized_kl
from .tensors import (FactorSet, cp_reconstruct_columns, cp_reconstruct_mode,
                      khatri_rao, khatri_rao_excluding, matricize,
                      remap_unfolding)
from .transport import (EPS_DIV, embed_columns, row_marginals, update_scalings)

# The direct (materialized-operator) solver is an oracle for small problems.
MAX_DIRECT_DIM = 10

INIT_LOW, INIT_HIGH = 0.1, 1.1


@dataclass
class SolverConfig:
    """Hyperparameters and switches for :func:`fit` and friends.

    ``rho`` sharpens the transport kernel, ``lam`` weights the marginal
    relaxation; together they fix the scaling exponent
    ``phi = lam * rho / (lam * rho + 1)``.
    """

    rank: int
    rho: float = 50.0
    lam: float = 1.0
    outer_iters: int = 50
    sinkhorn_iters: int = 25
    seed: int = 0
    warm_start: bool = True
    parallel: bool = True
    denominator_scale: str = "stacked"
    drop_zero_columns: bool = True
    track_objective: bool = True
    eps_div: float = EPS_DIV
    kernel: str | None = None

    def __post_init__(self):
        if self.rank < 1:
            raise DataError(f"rank must be positive, got {self.rank}")
        if not self.rho > 0:
            raise DataError(f"rho must be positive, got {self.rho}")
        if not self.lam > 0:
            raise DataError(f"lam must be positive, got {self.lam}")
        if self.outer_iters < 1 or self.sinkhorn_iters < 1:
            raise DataError("iteration counts must be positive")
        if self.denominator_scale not in ("stacked", "single"):
            raise DataError(
                f"denominator_scale must be 'stacked' or 'single', "
                f"got {self.denominator_scale!r}"
            )
        if not self.eps_div > 0:
            raise DataError("eps_div must be positive")

    @property
    def phi(self) -> float:
        return self.lam * self.rho / (self.lam * self.rho + 1.0)


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    transport_cost: float
    entropy: float
    recon_divergence: float
    data_divergence: float
    ot_seconds: float
    factor_seconds: float
    objective_seconds: float


@dataclass
class FitTrace:
    """Per-iteration objective parts and phase timings."""

    nnz_columns_per_mode: list
    records: list = field(default_factory=list)

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def to_dict(self, include_timings=True) -> dict:
        rows = []
        for r in self.records:
            row = {
                "iteration": r.iteration,
                "objective": r.objective,
                "transport_cost": r.transport_cost,
                "entropy": r.entropy,
                "recon_divergence": r.recon_divergence,
                "data_divergence": r.data_divergence,
            }
            if include_timings:
                row.update(ot_seconds=r.ot_seconds, factor_seconds=r.factor_seconds,
                           objective_seconds=r.objective_seconds)
            rows.append(row)
        return {"nnz_columns_per_mode": list(self.nnz_columns_per_mode),
                "records": rows}


def _check_problem(tensor, models, config):
    if tensor.nnz == 0:
        raise DataError("cannot factorize an empty tensor")
    if len(models) != tensor.ndim:
        raise DataError(
            f"{len(models)} cost models for an order-{tensor.ndim} tensor"
        )
    for n, model in enumerate(models):
        if model.dim != tensor.shape[n]:
            raise DataError(
                f"mode {n}: cost dimension {model.dim} does not match "
                f"extent {tensor.shape[n]}"
            )
        if model.rho != config.rho:
            raise DataError(
                f"mode {n}: cost model built with rho={model.rho}, "
                f"config has rho={config.rho}"
            )


def _init_factor(rng, n_rows, rank) -> np.ndarray:
    return rng.uniform(INIT_LOW, INIT_HIGH, size=(n_rows, rank))


def multiplicative_factor_update(factors, mode, deltas, config) -> np.ndarray:
    """One multiplicative update of ``factors[mode]`` with plans held fixed.

    ``deltas`` holds, per mode, the full-width matrix of plan row marginals
    in that mode's unfolding layout.  Every mode's marginals are remapped
    into this mode's layout, pooled against the current reconstruction, and
    pushed through the Khatri-Rao basis; the denominator counts either all
    ``N`` stacked copies of the column sums (``stacked``, the default, which
    keeps exact reconstructions fixed points) or a ``single`` copy.
    """
    shape = tuple(d.shape[0] for d in deltas)
    basis = khatri_rao_excluding(factors, mode)
    recon = factors[mode] @ basis.T
    pooled = np.zeros_like(recon)
    for i, delta in enumerate(deltas):
        pooled += remap_unfolding(delta, i, mode, shape)
    floored = int(np.logical_and(pooled > 0, recon < config.eps_div).sum())
    if floored:
        warnings.warn(
            f"mode {mode}: {floored} reconstruction entries floored in the "
            f"factor update", RuntimeWarning, stacklevel=2)
    ratio = np.where(pooled > 0, pooled / np.maximum(recon, config.eps_div), 0.0)
    numer = ratio @ basis
    scale = float(len(factors)) if config.denominator_scale == "stacked" else 1.0
    denom = scale * basis.sum(axis=0)
    return factors[mode] * numer / np.maximum(denom, config.eps_div)[None, :]


def objective_parts(tensor, factors, scalings, models, config, views=None) -> dict:
    """Evaluate the regularized objective at the current plans and factors.

    Returns the transport cost, plan entropy, the two marginal divergences
    (plan row marginals against the reconstruction, plan column marginals
    against the data), and their weighted total::

        objective = transport_cost - entropy / rho
                    + lam * (recon_divergence + data_divergence)

    Columns without plans contribute their reconstruction mass through the
    first divergence, which is what a zero plan costs.
    """
    mats = factors.factors if isinstance(factors, FactorSet) else list(factors)
    if views is None:
        views = [matricize(tensor, n) for n in range(tensor.ndim)]
    p1 = ent = p2 = p3 = 0.0
    for n in range(tensor.ndim):
        sc = scalings[n]
        kern = models[n].kernel
        u, v = sc.u, sc.v
        kv = kern @ v
        ktu = kern.T @ u
        delta_cols = u * kv
        psi_cols = v * ktu
        p1 += float((u * ((kern * models[n].cost) @ v)).sum())
        ent -= float(
            xlogy(delta_cols, u).sum()
            + (u * ((kern * np.log(kern)) @ v)).sum()
            + xlogy(psi_cols, v).sum()
        )
        recon_full = mats[n] @ khatri_rao_excluding(mats, n).T
        delta_full = embed_columns(delta_cols, sc.columns, views[n].n_cols)
        p2 += generalized_kl(delta_full, recon_full)
        x_cols = views[n].dense_columns(sc.columns)
        p3 += generalized_kl(psi_cols, x_cols)
    total = p1 - ent / config.rho + config.lam * (p2 + p3)
    return {
        "transport_cost": p1,
        "entropy": ent,
        "recon_divergence": p2,
        "data_divergence": p3,
        "objective": total,
    }


def _bcd_loop(tensor, models, config, factors, update_modes):
    n_modes = tensor.ndim
    views = [matricize(tensor, n) for n in range(n_modes)]
    if config.drop_zero_columns:
        columns = [v.nonzero_columns for v in views]
    else:
        columns = [np.arange(v.n_cols, dtype=np.int64) for v in views]
    scalings = [None] * n_modes
    trace = FitTrace(nnz_columns_per_mode=[v.nnz_columns for v in views])
    phi = config.phi
    for it in range(1, config.outer_iters + 1):
        t0 = time.perf_counter()
        deltas = []
        for n in range(n_modes):
            xhat_cols = cp_reconstruct_columns(factors, n, columns[n])
            warm = scalings[n] if config.warm_start else None
            scalings[n] = update_scalings(
                views[n], xhat_cols, models[n], phi,
                rounds=config.sinkhorn_iters, scalings=warm, columns=columns[n],
                kernel=config.kernel, parallel=config.parallel,
                eps_div=config.eps_div)
            deltas.append(
                embed_columns(row_marginals(scalings[n], models[n]),
                              columns[n], views[n].n_cols))
        t1 = time.perf_counter()
        for n in update_modes:
            factors[n] = multiplicative_factor_update(factors, n, deltas, config)
        t2 = time.perf_counter()
        if config.track_objective:
            parts = objective_parts(tensor, factors, scalings, models, config,
                                    views=views)
            if not np.isfinite(parts["objective"]):
                raise DivergenceError(
                    f"objective became non-finite at iteration {it}")
        else:
            parts = dict.fromkeys(
                ("transport_cost", "entropy", "recon_divergence",
                 "data_divergence", "objective"), float("nan"))
        t3 = time.perf_counter()
        trace.records.append(IterationRecord(
            iteration=it, objective=parts["objective"],
            transport_cost=parts["transport_cost"], entropy=parts["entropy"],
            recon_divergence=parts["recon_divergence"],
            data_divergence=parts["data_divergence"],
            ot_seconds=t1 - t0, factor_seconds=t2 - t1,
            objective_seconds=t3 - t2))
    return factors, trace


def fit(tensor, models, config):
    """Factorize ``tensor`` against per-mode cost models.

    Runs exactly ``config.outer_iters`` iterations (iteration count is the
    stopping rule) and returns ``(FactorSet, FitTrace)``.
    """
    _check_problem(tensor, models, config)
    rng = np.random.default_rng(config.seed)
    factors = [_init_factor(rng, s, config.rank) for s in tensor.shape]
    factors, trace = _bcd_loop(tensor, models, config, factors,
                               update_modes=range(tensor.ndim))
    return FactorSet(rank=config.rank, factors=factors), trace


def project(new_tensor, trained, models, config):
    """Project new data onto trained factors, refitting only mode 0.

    ``new_tensor`` must match the trained extents on modes ``1..N-1``; its
    mode-0 extent is free.  Returns ``(new_mode0_factor, FitTrace)``.  The
    trained factors are read-only here and come back unchanged.
    """
    _check_problem(new_tensor, models, config)
    if trained.rank != config.rank:
        raise DataError(
            f"trained rank {trained.rank} does not match config rank {config.rank}")
    if trained.ndim != new_tensor.ndim:
        raise DataError(
            f"trained order {trained.ndim} does not match tensor order "
            f"{new_tensor.ndim}")
    if trained.shape[1:] != new_tensor.shape[1:]:
        raise DataError(
            f"extents {new_tensor.shape[1:]} do not match trained "
            f"{trained.shape[1:]} on modes 1..N-1")
    rng = np.random.default_rng(config.seed)
    factors = [_init_factor(rng, new_tensor.shape[0], config.rank)]
    factors += [mat.copy() for mat in trained.factors[1:]]
    factors, trace = _bcd_loop(new_tensor, models, config, factors,
                               update_modes=[0])
    return factors[0], trace


def _kr_vec_map(factors, target, skip, rank) -> np.ndarray:
    """Dense map ``vec(factors[target]) -> vec(khatri_rao_excluding(., skip))``
    treating the other participating factor as fixed (order-3 only)."""
    others = [k for k in range(3) if k != skip]  # ascending: others[0] is fast
    fixed = [k for k in others if k != target][0]
    q_mat = factors[fixed]
    p_rows = factors[target].shape[0]
    eye_r = np.eye(rank)
    if others[0] == target:
        # target is the fast block: vec(Q kr P) = ((I_R kr Q) kron I_p) vec(P)
        return np.kron(khatri_rao(eye_r, q_mat), np.eye(p_rows))
    # target is the slow block: vec(P kr Q) = (I_pR kr (Q (I_R kron 1_p))) vec(P)
    spread = q_mat @ np.kron(eye_r, np.ones((1, p_rows)))
    return khatri_rao(np.eye(p_rows * rank), spread)


def _stacked_operator(factors, mode) -> np.ndarray:
    """Stack the three per-mode linear maps ``vec(factors[mode]) ->
    vec(unfolding)``, the off-target ones transposed (order-3 only)."""
    rank = factors[0].shape[1]
    blocks = []
    for m in range(3):
        if m == mode:
            basis = khatri_rao_excluding(factors, m)
            blocks.append(np.kron(basis, np.eye(factors[m].shape[0])))
        else:
            rows = int(np.prod([factors[k].shape[0] for k in range(3) if k != m]))
            lift = np.kron(factors[m], np.eye(rows))
            blocks.append(lift @ _kr_vec_map(factors, mode, m, rank))
    return np.vstack(blocks)


def _vec(mat) -> np.ndarray:
    return np.asarray(mat).reshape(-1, order="F")


def fit_direct(tensor, models, config):
    """Order-3, small-extent reference solver with materialized operators.

    The transport phase is shared with :func:`fit` but keeps every column;
    the factor phase updates the stacked vectorized system directly, one
    dense operator per mode.  From the same seed it follows the same
    trajectory as :func:`fit` up to floating-point regrouping.
    """
    _check_problem(tensor, models, config)
    if tensor.ndim != 3:
        raise DataError("the direct solver handles order-3 tensors only")
    if max(tensor.shape) > MAX_DIRECT_DIM:
        raise DataError(
            f"extent {max(tensor.shape)} too large for the direct solver "
            f"(cap {MAX_DIRECT_DIM})")
    rng = np.random.default_rng(config.seed)
    factors = [_init_factor(rng, s, config.rank) for s in tensor.shape]
    views = [matricize(tensor, n) for n in range(3)]
    columns = [np.arange(v.n_cols, dtype=np.int64) for v in views]
    scalings = [None] * 3
    trace = FitTrace(nnz_columns_per_mode=[v.nnz_columns for v in views])
    phi = config.phi
    scale = 3.0 if config.denominator_scale == "stacked" else 1.0
    for it in range(1, config.outer_iters + 1):
        t0 = time.perf_counter()
        deltas = []
        for n in range(3):
            xhat_cols = cp_reconstruct_mode(factors, n)
            warm = scalings[n] if config.warm_start else None
            scalings[n] = update_scalings(
                views[n], xhat_cols, models[n], phi,
                rounds=config.sinkhorn_iters, scalings=warm, columns=columns[n],
                kernel=config.kernel, parallel=config.parallel,
                eps_div=config.eps_div)
            deltas.append(row_marginals(scalings[n], models[n]))
        t1 = time.perf_counter()
        for n in range(3):
            op = _stacked_operator(factors, n)
            data = np.concatenate(
                [_vec(deltas[m]) if m == n else _vec(deltas[m].T)
                 for m in range(3)])
            x = _vec(factors[n])
            y = op @ x
            ratio = np.where(data > 0, data / np.maximum(y, config.eps_div), 0.0)
            denom = (op.T @ np.ones(op.shape[0])) * (scale / 3.0)
            x = x * (op.T @ ratio) / np.maximum(denom, config.eps_div)
            factors[n] = x.reshape((tensor.shape[n], config.rank), order="F")
        t2 = time.perf_counter()
        if config.track_objective:
            parts = objective_parts(tensor, factors, scalings, models, config,
                                    views=views)
            if not np.isfinite(parts["objective"]):
                raise DivergenceError(
                    f"objective became non-finite at iteration {it}")
        else:
            parts = dict.fromkeys(
                ("transport_cost", "entropy", "recon_divergence",
                 "data_divergence", "objective"), float("nan"))
        t3 = time.perf_counter()
        trace.records.append(IterationRecord(
            iteration=it, objective=parts["objective"],
            transport_cost=parts["transport_cost"], entropy=parts["entropy"],
            recon_divergence=parts["recon_divergence"],
            data_divergence=parts["data_divergence"],
            ot_seconds=t1 - t0, factor_seconds=t2 - t1,
            objective_seconds=t3 - t2))
    return FactorSet(rank=config.rank, factors=factors), trace


def compare_fit_routes(tensor, models, config) -> dict:
    """Fit with both routes and report per-mode factor discrepancies.

    The discrepancy is the max-norm difference relative to the direct
    route's max-norm, per mode.
    """
    standard, _ = fit(tensor, models, config)
    direct, _ = fit_direct(tensor, models, config)
    per_mode = []
    for a, b in zip(standard.factors, direct.factors):
        ref = max(float(np.abs(b).max()), 1e-300)
        per_mode.append(float(np.abs(a - b).max()) / ref)
    return {"per_mode": per_mode, "max": max(per_mode)}
