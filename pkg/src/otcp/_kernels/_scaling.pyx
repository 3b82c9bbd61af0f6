# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""OpenMP scaling kernel.

Columns are fully independent: each one runs its whole sequence of rounds
in a single thread with a fixed arithmetic order, so results are
bit-identical for any thread count.
"""

from cython.parallel cimport prange
from libc.math cimport isfinite, pow

import numpy as np

from otcp.errors import DivergenceError


def scaling_rounds(x_cols, xhat_cols, kern, double phi, int rounds, u0,
                   double eps_div, int num_threads=1):
    """Same contract as the fallback kernel; see otcp._kernels.fallback."""
    if rounds < 1:
        raise ValueError(f"rounds must be positive, got {rounds}")
    if num_threads < 1:
        num_threads = 1
    # Transposed (columns, bins) layout keeps each column contiguous.
    x_arr = np.ascontiguousarray(np.asarray(x_cols, dtype=np.float64).T)
    xh_arr = np.ascontiguousarray(np.asarray(xhat_cols, dtype=np.float64).T) ** phi
    k_arr = np.ascontiguousarray(kern, dtype=np.float64)
    kt_arr = np.ascontiguousarray(k_arr.T)
    u_arr = np.ascontiguousarray(np.asarray(u0, dtype=np.float64).T)
    v_arr = np.zeros_like(u_arr)
    err_arr = np.full(x_arr.shape[0], -1, dtype=np.int64)

    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] xh = xh_arr
    cdef double[:, ::1] k = k_arr
    cdef double[:, ::1] kt = kt_arr
    cdef double[:, ::1] u = u_arr
    cdef double[:, ::1] v = v_arr
    cdef long[::1] err_round = err_arr
    cdef Py_ssize_t n_cols = x_arr.shape[0]
    cdef Py_ssize_t n_bins = x_arr.shape[1]
    cdef Py_ssize_t j, i, c, t
    cdef double s
    cdef int ok, nt = num_threads

    with nogil:
        for j in prange(n_cols, num_threads=nt, schedule='static'):
            for t in range(rounds):
                for i in range(n_bins):
                    s = 0.0
                    for c in range(n_bins):
                        s = s + kt[i, c] * u[j, c]
                    if s < eps_div:
                        s = eps_div
                    v[j, i] = pow(x[j, i] / s, phi)
                for i in range(n_bins):
                    s = 0.0
                    for c in range(n_bins):
                        s = s + k[i, c] * v[j, c]
                    if s < eps_div:
                        s = eps_div
                    u[j, i] = xh[j, i] / pow(s, phi)
                ok = 1
                for i in range(n_bins):
                    if not isfinite(u[j, i]) or not isfinite(v[j, i]):
                        ok = 0
                if ok == 0:
                    err_round[j] = t
                    break

    bad = np.flatnonzero(err_arr >= 0)
    if bad.size:
        col = int(bad[0])
        raise DivergenceError(
            f"non-finite scaling in column {col} at round {int(err_arr[col])}"
        )
    return np.ascontiguousarray(u_arr.T), np.ascontiguousarray(v_arr.T)
