"""Optimal-transport CP factorization of sparse nonnegative tensors.

The package factorizes a sparse nonnegative tensor so that every mode
unfolding of the reconstruction is close to the data in (relaxed)
Wasserstein distance, sharing one ground cost matrix per mode across all
of that mode's columns.  Zero columns are dropped from the transport step
without changing the result, which is what makes sparse inputs cheap.
"""

__version__ = "0.1.0"

from ._kernels import KERNEL_NAME, available_kernels
from .costs import (build_cost_cosine, build_cost_identity, build_cost_random,
                    build_mode_costs)
from .errors import DataError, DivergenceError
from .metrics import (DistanceReport, entropy, generalized_kl,
                      reconstruction_error, wasserstein_matrix,
                      wasserstein_tensor)
from .noise import inject_noise_bernoulli, inject_noise_poisson
from .solver import (FitTrace, SolverConfig, compare_fit_routes, fit,
                     fit_direct, multiplicative_factor_update, objective_parts,
                     project)
from .tensorio import (load_factors, load_matrix, load_tensor, save_factors,
                       save_matrix, save_tensor)
from .tensors import (FactorSet, MatricizedView, SparseTensor,
                      cp_reconstruct_columns, cp_reconstruct_mode, khatri_rao,
                      khatri_rao_excluding, matricize, remap_unfolding,
                      tensorize)
from .transport import (CostModel, ExplicitTransport, TransportScalings,
                        build_kernel, col_marginals, embed_columns,
                        entropic_ot_cost, exact_ot, row_marginals,
                        transport_plan, update_scalings)
from .runner import compare_outputs, rerun, run_experiment

__all__ = [
    "KERNEL_NAME", "available_kernels",
    "SparseTensor", "MatricizedView", "FactorSet",
    "matricize", "tensorize", "khatri_rao", "khatri_rao_excluding",
    "cp_reconstruct_mode", "cp_reconstruct_columns", "remap_unfolding",
    "CostModel", "TransportScalings", "ExplicitTransport", "build_kernel",
    "update_scalings", "row_marginals", "col_marginals", "embed_columns",
    "transport_plan", "exact_ot", "entropic_ot_cost",
    "entropy", "generalized_kl", "wasserstein_matrix", "wasserstein_tensor",
    "reconstruction_error", "DistanceReport",
    "SolverConfig", "FitTrace", "fit", "project", "fit_direct",
    "multiplicative_factor_update", "objective_parts", "compare_fit_routes",
    "build_cost_cosine", "build_cost_identity", "build_cost_random",
    "build_mode_costs", "inject_noise_bernoulli", "inject_noise_poisson",
    "load_tensor", "save_tensor", "load_matrix", "save_matrix",
    "load_factors", "save_factors",
    "run_experiment", "rerun", "compare_outputs",
    "DataError", "DivergenceError",
]
