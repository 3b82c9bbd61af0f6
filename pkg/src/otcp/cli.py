"""Command-line interface.

Exit codes: 0 success, 2 usage error (argparse), 3 invalid data or config,
4 numerical divergence, 5 I/O failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .bench import benchmark_kernels, benchmark_sparsity
from .costs import build_cost_cosine, build_cost_identity, build_cost_random
from .errors import DataError, DivergenceError
from .metrics import wasserstein_tensor
from .noise import inject_noise_bernoulli, inject_noise_poisson
from .runner import compare_outputs, rerun, run_experiment
from .solver import SolverConfig, compare_fit_routes, project
from .tensorio import load_factors, load_matrix, load_tensor, save_matrix, save_tensor
from .transport import build_kernel


def _add_solver_args(parser, with_rank=True, none_defaults=False):
    # none_defaults lets `project` fall back to the training run's values
    if with_rank:
        parser.add_argument("--rank", type=int, required=True)
    parser.add_argument("--rho", type=float,
                        default=None if none_defaults else 50.0)
    parser.add_argument("--lambda", dest="lam", type=float,
                        default=None if none_defaults else 1.0)
    parser.add_argument("--outer", type=int,
                        default=None if none_defaults else 50,
                        help="outer iterations (the stopping rule)")
    parser.add_argument("--sinkhorn", type=int,
                        default=None if none_defaults else 25,
                        help="scaling rounds per transport refresh")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--parallel", choices=("on", "off"), default="on")
    parser.add_argument("--denominator", choices=("stacked", "single"),
                        default=None if none_defaults else "stacked")
    parser.add_argument("--kernel", choices=("python", "compiled"), default=None,
                        help="scaling kernel (default: best available)")
    parser.add_argument("--no-warm-start", action="store_true")
    parser.add_argument("--keep-zero-columns", action="store_true")


def _add_cost_args(parser):
    parser.add_argument("--cost-mode",
                        choices=("cosine", "identity", "random", "files"),
                        default="cosine")
    parser.add_argument("--cost-file", action="append", default=[],
                        metavar="MODE=PATH",
                        help="per-mode cost matrix file (repeatable)")
    parser.add_argument("--cost-seed", type=int, default=0)


def _cost_files_dict(pairs):
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise DataError(f"--cost-file expects MODE=PATH, got {pair!r}")
        mode, path = pair.split("=", 1)
        out[str(int(mode))] = path
    return out


def _config_from_args(args):
    return {
        "tensor": args.tensor,
        "rank": args.rank,
        "rho": args.rho,
        "lambda": args.lam,
        "outer_iters": args.outer,
        "sinkhorn_iters": args.sinkhorn,
        "seed": args.seed,
        "parallel": args.parallel == "on",
        "denominator_scale": args.denominator,
        "warm_start": not args.no_warm_start,
        "drop_zero_columns": not args.keep_zero_columns,
        "kernel": args.kernel,
        "cost_mode": args.cost_mode,
        "cost_seed": args.cost_seed,
        "cost_files": _cost_files_dict(args.cost_file),
        "holdout_fraction": getattr(args, "holdout", 0.0),
    }


def _build_costs_for(tensor, mode_kind, cost_files, cost_seed):
    costs = []
    for n in range(tensor.ndim):
        if mode_kind == "cosine":
            costs.append(build_cost_cosine(tensor, n))
        elif mode_kind == "identity":
            costs.append(build_cost_identity(tensor.shape[n]))
        elif mode_kind == "random":
            costs.append(build_cost_random(tensor.shape[n], (cost_seed, n)))
        else:
            path = cost_files.get(str(n))
            if path is None:
                raise DataError(f"cost-mode files: missing --cost-file {n}=PATH")
            costs.append(load_matrix(path))
    return costs


def cmd_factorize(args):
    manifest = run_experiment(_config_from_args(args), args.out)
    print(f"kernel: {manifest['kernel']}  threads: {manifest['threads']}")
    print(f"fit: {manifest['timings']['fit_seconds']:.3f}s")
    print(f"wrote {len(manifest['outputs'])} files to {args.out}")


def cmd_project(args):
    container = args.factors
    factors_dir = (container if os.path.exists(os.path.join(container, "factors.json"))
                   else os.path.join(container, "factors"))
    trained, factor_manifest = load_factors(factors_dir)
    saved = factor_manifest.get("config") or {}

    def pick(flag, key, default):
        return flag if flag is not None else saved.get(key, default)

    tensor = load_tensor(args.tensor)
    config = SolverConfig(
        rank=int(saved.get("rank", trained.rank)),
        rho=float(pick(args.rho, "rho", 50.0)),
        lam=float(pick(args.lam, "lam", 1.0)),
        outer_iters=int(pick(args.outer, "outer_iters", 50)),
        sinkhorn_iters=int(pick(args.sinkhorn, "sinkhorn_iters", 25)),
        seed=args.seed,
        warm_start=not args.no_warm_start,
        parallel=args.parallel == "on",
        denominator_scale=pick(args.denominator, "denominator_scale", "stacked"),
        drop_zero_columns=not args.keep_zero_columns,
        kernel=args.kernel,
    )
    cost_files = _cost_files_dict(args.cost_file)
    base_costs = _build_costs_for(tensor, args.cost_mode, cost_files,
                                  args.cost_seed)
    costs = []
    for n in range(tensor.ndim):
        stored = os.path.join(container, "costs", f"mode{n}.txt")
        if n > 0 and args.cost_mode == "cosine" and not args.cost_file \
                and os.path.exists(stored):
            costs.append(load_matrix(stored))  # reuse training geometry
        else:
            costs.append(base_costs[n])
    models = [build_kernel(c, config.rho, mode=n) for n, c in enumerate(costs)]
    new_factor, trace = project(tensor, trained, models, config)
    os.makedirs(args.out, exist_ok=True)
    save_matrix(new_factor, os.path.join(args.out, "mode0.txt"))
    with open(os.path.join(args.out, "trace.json"), "w", encoding="utf-8") as fh:
        json.dump(trace.to_dict(include_timings=False), fh, indent=2, sort_keys=True)
        fh.write("\n")
    final = trace.records[-1].objective
    print(f"projected mode-0 factor ({new_factor.shape[0]}x{new_factor.shape[1]}), "
          f"final objective {final:.6g}")


def cmd_eval(args):
    x = load_tensor(args.a)
    y = load_tensor(args.b)
    costs = _build_costs_for(x, args.cost_mode, _cost_files_dict(args.cost_file),
                             args.cost_seed)
    models = [build_kernel(c, args.rho, mode=n) for n, c in enumerate(costs)]
    report = wasserstein_tensor(x, y, models, mode=args.mode,
                                sinkhorn_iters=args.sinkhorn,
                                normalize=args.normalize)
    for n, val in enumerate(report.per_mode):
        print(f"mode {n}: {val!r}")
    print(f"total: {report.total!r}")


def cmd_noise(args):
    tensor = load_tensor(args.tensor)
    if args.model == "bernoulli":
        noisy = inject_noise_bernoulli(tensor, args.p, args.seed)
    else:
        noisy = inject_noise_poisson(tensor, args.p, args.seed)
    save_tensor(noisy, args.out)
    print(f"{tensor.nnz} -> {noisy.nnz} entries ({noisy.nnz - tensor.nnz} added)")


def cmd_costmat(args):
    tensor = load_tensor(args.tensor)
    if args.kind == "cosine":
        cost = build_cost_cosine(tensor, args.mode)
    elif args.kind == "identity":
        cost = build_cost_identity(tensor.shape[args.mode])
    else:
        cost = build_cost_random(tensor.shape[args.mode], (args.seed, args.mode))
    save_matrix(cost, args.out)
    print(f"wrote {cost.shape[0]}x{cost.shape[1]} cost matrix to {args.out}")


def cmd_compare_direct(args):
    tensor = load_tensor(args.tensor)
    costs = _build_costs_for(tensor, args.cost_mode,
                             _cost_files_dict(args.cost_file), args.cost_seed)
    config = SolverConfig(
        rank=args.rank, rho=args.rho, lam=args.lam, outer_iters=args.outer,
        sinkhorn_iters=args.sinkhorn, seed=args.seed,
        warm_start=not args.no_warm_start, parallel=args.parallel == "on",
        denominator_scale=args.denominator,
        drop_zero_columns=not args.keep_zero_columns, kernel=args.kernel)
    models = [build_kernel(c, config.rho, mode=n) for n, c in enumerate(costs)]
    result = compare_fit_routes(tensor, models, config)
    for n, val in enumerate(result["per_mode"]):
        print(f"mode {n}: max relative factor discrepancy {val:.3e}")
    print(f"overall: {result['max']:.3e}")


def cmd_bench(args):
    shape = tuple(int(t) for t in args.shape.split(","))
    densities = [float(t) for t in args.density_grid.split(",")]
    rows = benchmark_sparsity(shape, densities, rank=args.rank,
                              sinkhorn_iters=args.sinkhorn, seed=args.seed,
                              repeats=args.repeats, kernel=args.kernel)
    print("density  nnz     dropped_s  full_s     speedup  max_factor_diff")
    for row in rows:
        print(f"{row['density']:<8.3g} {row['nnz']:<7d} "
              f"{row['dropped_seconds']:<10.4f} {row['full_seconds']:<10.4f} "
              f"{row['speedup']:<8.2f} {row['max_factor_diff']:.3e}")
    kernel_rows = benchmark_kernels(shape=shape, rank=args.rank,
                                    sinkhorn_iters=args.sinkhorn,
                                    seed=args.seed, repeats=args.repeats)
    print("\nkernel    seconds    vs_first")
    for row in kernel_rows:
        print(f"{row['kernel']:<9} {row['seconds']:<10.4f} "
              f"diff={row['max_rel_diff_vs_first']:.2e} "
              f"speedup={row.get('speedup_vs_first', 1.0):.2f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"sparsity": rows, "kernels": kernel_rows}, fh, indent=2)
            fh.write("\n")


def cmd_run(args):
    manifest = run_experiment(args.config, args.out)
    print(f"kernel: {manifest['kernel']}  threads: {manifest['threads']}")
    print(f"wrote {len(manifest['outputs'])} files to {args.out}")


def cmd_rerun(args):
    with open(args.manifest, "r", encoding="utf-8") as fh:
        original = json.load(fh)
    replayed = rerun(args.manifest, args.out)
    result = compare_outputs(original, replayed)
    if result["identical"]:
        print(f"all {len(replayed['outputs'])} outputs bit-identical")
        return 0
    print("outputs differ:", ", ".join(result["mismatched"]), file=sys.stderr)
    return 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="otcp",
        description="Optimal-transport CP factorization of sparse tensors")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("factorize", help="fit factors to a tensor file")
    p.add_argument("--tensor", required=True)
    _add_solver_args(p)
    _add_cost_args(p)
    p.add_argument("--holdout", type=float, default=0.0,
                   help="mode-0 fraction to hold out and project")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("project", help="project new data onto trained factors")
    p.add_argument("--tensor", required=True)
    p.add_argument("--factors", required=True,
                   help="factor directory or a factorize output directory")
    _add_solver_args(p, with_rank=False, none_defaults=True)
    _add_cost_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("eval", help="transport distance between two tensors")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--mode", choices=("exact", "entropic"), default="exact")
    p.add_argument("--rho", type=float, default=50.0)
    p.add_argument("--sinkhorn", type=int, default=1000)
    p.add_argument("--normalize", action="store_true",
                   help="normalize matched columns to unit mass first")
    _add_cost_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("noise", help="inject synthetic noise into a tensor")
    p.add_argument("--tensor", required=True)
    p.add_argument("--model", choices=("bernoulli", "poisson"), required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("costmat", help="build and save one mode's cost matrix")
    p.add_argument("--tensor", required=True)
    p.add_argument("--mode", type=int, required=True)
    p.add_argument("--kind", choices=("cosine", "identity", "random"),
                   required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_costmat)

    p = sub.add_parser("compare-direct",
                       help="standard vs materialized-operator solver")
    p.add_argument("--tensor", required=True)
    _add_solver_args(p)
    _add_cost_args(p)
    p.set_defaults(func=cmd_compare_direct)

    p = sub.add_parser("bench", help="sparsity and kernel timing table")
    p.add_argument("--shape", default="30,30,30")
    p.add_argument("--density-grid", default="0.1,0.5,1.0")
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--sinkhorn", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--kernel", choices=("python", "compiled"), default=None)
    p.add_argument("--out", default=None, help="also write rows as JSON")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("rerun", help="replay a manifest and verify outputs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
        return int(result) if result is not None else 0
    except DataError as err:
        print(f"error[data]: {err}", file=sys.stderr)
        return 3
    except DivergenceError as err:
        print(f"error[divergence]: {err}", file=sys.stderr)
        return 4
    except OSError as err:
        print(f"error[io]: {err}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
