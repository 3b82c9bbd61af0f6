"""Pure-numpy scaling kernel.

Reference implementation of the batched alternating scaling rounds, used
when the compiled extension is unavailable (or forced via OTCP_KERNEL).
"""

import numpy as np

from ..errors import DivergenceError


def scaling_rounds(x_cols, xhat_cols, kern, phi, rounds, u0, eps_div, num_threads=1):
    """Run ``rounds`` alternating scaling updates on all columns at once.

    Each round updates, per column ``j``::

        v_j = (x_j / max(K^T u_j, eps))^phi
        u_j = xhat_j^phi / max(K v_j, eps)^phi

    with ``0 / anything = 0`` handled by the floor on the denominator.

    ``num_threads`` is accepted for interface parity with the compiled
    kernel and ignored; the matrix products already run inside BLAS.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be positive, got {rounds}")
    x = np.asarray(x_cols, dtype=np.float64)
    u = np.array(u0, dtype=np.float64, copy=True)
    xhat_pow = np.asarray(xhat_cols, dtype=np.float64) ** phi
    kern = np.ascontiguousarray(kern, dtype=np.float64)
    kern_t = np.ascontiguousarray(kern.T)
    v = np.zeros_like(u)
    # overflow is not an error here: it is detected below and reported as
    # a divergence with the offending column
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(rounds):
            np.matmul(kern_t, u, out=v)
            np.maximum(v, eps_div, out=v)
            np.divide(x, v, out=v)
            np.power(v, phi, out=v)
            den = np.matmul(kern, v)
            np.maximum(den, eps_div, out=den)
            np.power(den, phi, out=den)
            np.divide(xhat_pow, den, out=u)
            if not (np.isfinite(u).all() and np.isfinite(v).all()):
                bad = ~(np.isfinite(u).all(axis=0) & np.isfinite(v).all(axis=0))
                col = int(np.argmax(bad))
                raise DivergenceError(
                    f"non-finite scaling in column {col} at round {t}")
    return u, v
