"""Text round trips for tensors, matrices, and factor sets.

All numeric output uses ``repr``, which in Python 3 is the shortest string
that parses back to the identical double, so every round trip is lossless.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .errors import DataError
from .tensors import FactorSet, SparseTensor


def save_tensor(tensor, path) -> None:
    """Write one header line ``shape I_0 ... I_{N-1}`` then one
    ``i_0 ... i_{N-1} value`` line per stored entry."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("shape " + " ".join(str(s) for s in tensor.shape) + "\n")
        for coord, value in zip(tensor.coords, tensor.values):
            fh.write(" ".join(str(int(c)) for c in coord) + f" {float(value)!r}\n")


def load_tensor(path) -> SparseTensor:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    content = [(k + 1, ln) for k, ln in enumerate(lines) if ln.strip()]
    if not content:
        raise DataError(f"{path}: empty file")
    lineno, header = content[0]
    tokens = header.split()
    if tokens[0] != "shape" or len(tokens) < 3:
        raise DataError(f"{path}:{lineno}: expected 'shape I_0 I_1 ...'")
    try:
        shape = tuple(int(t) for t in tokens[1:])
    except ValueError:
        raise DataError(f"{path}:{lineno}: malformed extent") from None
    coords, values = [], []
    for lineno, line in content[1:]:
        tokens = line.split()
        if len(tokens) != len(shape) + 1:
            raise DataError(
                f"{path}:{lineno}: expected {len(shape)} indices and a value")
        try:
            coord = [int(t) for t in tokens[:-1]]
            value = float(tokens[-1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed entry") from None
        if value < 0:
            raise DataError(f"{path}:{lineno}: negative value {value!r}")
        if value == 0:
            raise DataError(f"{path}:{lineno}: explicit zero entry")
        coords.append(coord)
        values.append(value)
    try:
        return SparseTensor(
            shape,
            np.array(coords, dtype=np.int64).reshape(len(values), len(shape)),
            np.array(values),
        )
    except DataError as err:
        raise DataError(f"{path}: {err}") from None


def save_matrix(matrix, path) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DataError(f"expected a matrix, got ndim {matrix.ndim}")
    with open(path, "w", encoding="utf-8") as fh:
        for row in matrix:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_matrix(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty file")
    rows = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        try:
            row = [float(t) for t in line.split()]
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed row") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataError(
                f"{path}:{lineno}: row length {len(row)} != {width}")
        rows.append(row)
    return np.array(rows)


FACTOR_MANIFEST = "factors.json"


def save_factors(factor_set, dirpath, config=None, extra=None) -> None:
    """Write one matrix file per mode plus a JSON manifest."""
    os.makedirs(dirpath, exist_ok=True)
    files = []
    for n, mat in enumerate(factor_set.factors):
        name = f"mode{n}.txt"
        save_matrix(mat, os.path.join(dirpath, name))
        files.append(name)
    manifest = {
        "rank": factor_set.rank,
        "shape": list(factor_set.shape),
        "files": files,
        "config": dataclasses.asdict(config) if config is not None else None,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(dirpath, FACTOR_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_factors(dirpath):
    """Read a factor directory back; returns ``(FactorSet, manifest dict)``."""
    manifest_path = os.path.join(dirpath, FACTOR_MANIFEST)
    if not os.path.exists(manifest_path):
        raise DataError(f"{dirpath}: missing {FACTOR_MANIFEST}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    mats = [load_matrix(os.path.join(dirpath, name)) for name in manifest["files"]]
    factor_set = FactorSet(rank=int(manifest["rank"]), factors=mats)
    if list(factor_set.shape) != list(manifest["shape"]):
        raise DataError(
            f"{dirpath}: factor shapes {factor_set.shape} disagree with "
            f"manifest {manifest['shape']}")
    return factor_set, manifest
