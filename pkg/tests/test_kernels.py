"""Compiled scaling kernel vs. the pure-Python fallback."""

import os
import subprocess
import sys

import numpy as np
import pytest

from otcp import DivergenceError, available_kernels
from otcp._kernels import KERNEL_NAME, get_kernel, resolve_threads

HAVE_COMPILED = "compiled" in available_kernels()


def make_inputs(rng, n_rows=6, n_cols=9):
    x = rng.uniform(0.0, 1.0, size=(n_rows, n_cols))
    x[x < 0.4] = 0.0  # sparse columns, some entries zero
    x[:, 0] = rng.uniform(0.2, 1.0, size=n_rows)  # keep one dense column
    xhat = rng.uniform(0.2, 1.2, size=(n_rows, n_cols))
    cost = rng.uniform(0.1, 1.0, size=(n_rows, n_rows))
    cost = 0.5 * (cost + cost.T)
    np.fill_diagonal(cost, 0.0)
    kern = np.exp(-3.0 * cost - 1.0)
    u0 = np.ones_like(x)
    return x, xhat, kern, u0


def test_python_kernel_runs(rng):
    x, xhat, kern, u0 = make_inputs(rng)
    u, v = get_kernel("python")(x, xhat, kern, 0.8, 30, u0, 1e-300, 1)
    assert u.shape == x.shape and v.shape == x.shape
    assert np.isfinite(u).all() and np.isfinite(v).all()


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernel not built")
def test_compiled_matches_python(rng):
    x, xhat, kern, u0 = make_inputs(rng)
    for phi in (0.5, 0.9, 1.0):
        up, vp = get_kernel("python")(x, xhat, kern, phi, 40, u0, 1e-300, 1)
        uc, vc = get_kernel("compiled")(x, xhat, kern, phi, 40, u0, 1e-300, 2)
        np.testing.assert_allclose(uc, up, rtol=1e-10, atol=1e-300)
        np.testing.assert_allclose(vc, vp, rtol=1e-10, atol=1e-300)


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernel not built")
def test_compiled_bitwise_stable_across_thread_counts(rng):
    x, xhat, kern, u0 = make_inputs(rng, n_rows=8, n_cols=40)
    kernel = get_kernel("compiled")
    ref_u, ref_v = kernel(x, xhat, kern, 0.85, 30, u0, 1e-300, 1)
    for threads in (2, 3, 8):
        u, v = kernel(x, xhat, kern, 0.85, 30, u0, 1e-300, threads)
        np.testing.assert_array_equal(u, ref_u)
        np.testing.assert_array_equal(v, ref_v)


def test_kernels_report_divergent_column(rng):
    x, xhat, kern, u0 = make_inputs(rng, n_rows=4, n_cols=3)
    xhat[:, 2] = 1e308
    for name, kernel in available_kernels().items():
        with pytest.raises(DivergenceError, match="column 2"):
            kernel(x, xhat, kern, 0.98, 60, u0, 1e-300, 1)


def test_get_kernel_rejects_unknown():
    with pytest.raises(ValueError):
        get_kernel("fortran")


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv("OTCP_NUM_THREADS", raising=False)
    assert resolve_threads(False) == 1
    assert resolve_threads(True) >= 1
    monkeypatch.setenv("OTCP_NUM_THREADS", "3")
    assert resolve_threads(True) == 3
    assert resolve_threads(False) == 1


def test_kernel_env_var_forces_selection():
    code = "import otcp; print(otcp.KERNEL_NAME)"
    env = dict(os.environ, OTCP_KERNEL="python")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    env = dict(os.environ, OTCP_KERNEL="nonsense")
    bad = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert bad.returncode != 0


def test_default_kernel_is_announced():
    assert KERNEL_NAME in available_kernels()
