"""Config-driven experiment runner with reproducibility manifests.

``run_experiment`` executes a factorization (and optionally a projection of
a held-out slab along mode 0) from a plain JSON config, writing every
artifact plus a manifest of input/output digests.  ``rerun`` replays a
manifest and reports whether the outputs came back bit-identical.  Wall
times live only in the manifest, never in the compared outputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import time

import numpy as np

from . import __version__
from ._kernels import KERNEL_NAME, resolve_threads
from .costs import build_cost_cosine, build_cost_identity, build_cost_random
from .errors import DataError
from .solver import SolverConfig, fit, project
from .tensorio import load_matrix, load_tensor, save_matrix, save_tensor, save_factors
from .tensors import SparseTensor
from .transport import build_kernel

CONFIG_DEFAULTS = {
    "rho": 50.0,
    "lambda": 1.0,
    "outer_iters": 50,
    "sinkhorn_iters": 25,
    "seed": 0,
    "warm_start": True,
    "parallel": True,
    "denominator_scale": "stacked",
    "drop_zero_columns": True,
    "track_objective": True,
    "kernel": None,
    "cost_mode": "cosine",
    "cost_seed": 0,
    "cost_files": {},
    "holdout_fraction": 0.0,
}


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_config(source) -> dict:
    """Accept a dict or a JSON file path; fill defaults and validate keys."""
    if isinstance(source, (str, os.PathLike)):
        base = os.path.dirname(os.path.abspath(source))
        with open(source, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    else:
        base = os.getcwd()
        raw = dict(source)
    unknown = set(raw) - set(CONFIG_DEFAULTS) - {"tensor", "rank"}
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    if "tensor" not in raw or "rank" not in raw:
        raise DataError("config requires 'tensor' and 'rank'")
    config = dict(CONFIG_DEFAULTS)
    config.update(raw)
    config["tensor"] = os.path.normpath(os.path.join(base, config["tensor"]))
    config["cost_files"] = {
        str(k): os.path.normpath(os.path.join(base, v))
        for k, v in dict(config["cost_files"]).items()
    }
    if config["cost_mode"] not in ("cosine", "identity", "random", "files"):
        raise DataError(f"unknown cost_mode {config['cost_mode']!r}")
    if not 0 <= config["holdout_fraction"] < 1:
        raise DataError("holdout_fraction must be in [0, 1)")
    return config


def solver_config(config) -> SolverConfig:
    return SolverConfig(
        rank=int(config["rank"]),
        rho=float(config["rho"]),
        lam=float(config["lambda"]),
        outer_iters=int(config["outer_iters"]),
        sinkhorn_iters=int(config["sinkhorn_iters"]),
        seed=int(config["seed"]),
        warm_start=bool(config["warm_start"]),
        parallel=bool(config["parallel"]),
        denominator_scale=config["denominator_scale"],
        drop_zero_columns=bool(config["drop_zero_columns"]),
        track_objective=bool(config["track_objective"]),
        kernel=config["kernel"],
    )


def build_cost_matrix(config, tensor, mode) -> np.ndarray:
    kind = config["cost_mode"]
    if kind == "cosine":
        return build_cost_cosine(tensor, mode)
    if kind == "identity":
        return build_cost_identity(tensor.shape[mode])
    if kind == "random":
        return build_cost_random(tensor.shape[mode], (int(config["cost_seed"]), mode))
    path = config["cost_files"].get(str(mode))
    if path is None:
        raise DataError(f"cost_mode 'files' but no cost file for mode {mode}")
    return load_matrix(path)


def _split_mode0(tensor, fraction):
    """Deterministic tail split along mode 0: last slabs are held out."""
    n_holdout = int(round(fraction * tensor.shape[0]))
    if n_holdout < 1 or n_holdout >= tensor.shape[0]:
        raise DataError(
            f"holdout_fraction {fraction} leaves no usable split for extent "
            f"{tensor.shape[0]}")
    cut = tensor.shape[0] - n_holdout
    in_train = tensor.coords[:, 0] < cut
    train = SparseTensor(
        (cut,) + tensor.shape[1:], tensor.coords[in_train], tensor.values[in_train])
    hold_coords = tensor.coords[~in_train].copy()
    hold_coords[:, 0] -= cut
    holdout = SparseTensor(
        (n_holdout,) + tensor.shape[1:], hold_coords, tensor.values[~in_train])
    return train, holdout


def _write_trace(trace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trace.to_dict(include_timings=False), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_experiment(config, out_dir) -> dict:
    """Execute a config; write artifacts and ``manifest.json`` to ``out_dir``."""
    config = load_config(config)
    os.makedirs(out_dir, exist_ok=True)
    tensor = load_tensor(config["tensor"])
    sc = solver_config(config)

    if config["holdout_fraction"] > 0:
        train, holdout = _split_mode0(tensor, config["holdout_fraction"])
    else:
        train, holdout = tensor, None

    costs_dir = os.path.join(out_dir, "costs")
    os.makedirs(costs_dir, exist_ok=True)
    models = []
    outputs = []
    for n in range(train.ndim):
        cost = build_cost_matrix(config, train, n)
        name = os.path.join("costs", f"mode{n}.txt")
        save_matrix(cost, os.path.join(out_dir, name))
        outputs.append(name)
        models.append(build_kernel(cost, sc.rho, mode=n))

    timings = {}
    t0 = time.perf_counter()
    factors, trace = fit(train, models, sc)
    timings["fit_seconds"] = time.perf_counter() - t0
    save_factors(factors, os.path.join(out_dir, "factors"), config=sc)
    outputs += [os.path.join("factors", f"mode{n}.txt") for n in range(train.ndim)]
    outputs.append(os.path.join("factors", "factors.json"))
    _write_trace(trace, os.path.join(out_dir, "trace.json"))
    outputs.append("trace.json")
    if config["holdout_fraction"] > 0:
        save_tensor(train, os.path.join(out_dir, "train.txt"))
        save_tensor(holdout, os.path.join(out_dir, "holdout.txt"))
        outputs += ["train.txt", "holdout.txt"]
        proj_models = [build_kernel(build_cost_matrix(config, holdout, 0), sc.rho, mode=0)]
        proj_models += models[1:]
        t0 = time.perf_counter()
        new_factor, proj_trace = project(holdout, factors, proj_models, sc)
        timings["project_seconds"] = time.perf_counter() - t0
        proj_dir = os.path.join(out_dir, "projection")
        os.makedirs(proj_dir, exist_ok=True)
        save_matrix(new_factor, os.path.join(proj_dir, "mode0.txt"))
        save_matrix(proj_models[0].cost, os.path.join(proj_dir, "cost_mode0.txt"))
        _write_trace(proj_trace, os.path.join(proj_dir, "trace.json"))
        outputs += [os.path.join("projection", p)
                    for p in ("mode0.txt", "cost_mode0.txt", "trace.json")]

    manifest = {
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "numpy_version": np.__version__,
        "kernel": config["kernel"] or KERNEL_NAME,
        "threads": resolve_threads(sc.parallel),
        "config": config,
        "inputs": {
            "tensor": {"path": config["tensor"], "sha256": sha256_file(config["tensor"])},
            "cost_files": {
                mode: {"path": path, "sha256": sha256_file(path)}
                for mode, path in config["cost_files"].items()
            },
        },
        "timings": timings,
        "outputs": {name: sha256_file(os.path.join(out_dir, name)) for name in outputs},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def rerun(manifest_path, out_dir) -> dict:
    """Replay a manifest into ``out_dir``; inputs must be unchanged."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    recorded = manifest["inputs"]["tensor"]
    current = sha256_file(recorded["path"])
    if current != recorded["sha256"]:
        raise DataError(
            f"input tensor {recorded['path']} changed since the original run")
    for mode, info in manifest["inputs"]["cost_files"].items():
        if sha256_file(info["path"]) != info["sha256"]:
            raise DataError(
                f"cost file for mode {mode} changed since the original run")
    return run_experiment(manifest["config"], out_dir)


def compare_outputs(manifest_a, manifest_b) -> dict:
    """Digest-level comparison of two manifests' outputs."""
    a, b = manifest_a["outputs"], manifest_b["outputs"]
    mismatched = sorted(
        name for name in set(a) | set(b) if a.get(name) != b.get(name))
    return {"identical": not mismatched, "mismatched": mismatched}
