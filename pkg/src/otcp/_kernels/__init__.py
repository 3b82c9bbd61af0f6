"""Kernel selection for the batched scaling rounds.

The compiled OpenMP kernel is preferred when the extension built; the
pure-numpy fallback is otherwise used.  Set OTCP_KERNEL=python or
OTCP_KERNEL=compiled to force a choice, and OTCP_NUM_THREADS to cap the
thread count used by the compiled kernel.
"""

import os

from . import fallback

try:
    from . import _scaling as _compiled
except ImportError:
    _compiled = None

_forced = os.environ.get("OTCP_KERNEL")
if _forced == "python":
    _active = fallback
elif _forced == "compiled":
    if _compiled is None:
        raise ImportError("OTCP_KERNEL=compiled but the extension is not built")
    _active = _compiled
elif _forced:
    raise ImportError(f"OTCP_KERNEL must be 'python' or 'compiled', got {_forced!r}")
else:
    _active = _compiled if _compiled is not None else fallback

KERNEL_NAME = "compiled" if _active is _compiled else "python"
scaling_rounds = _active.scaling_rounds


def available_kernels():
    """Name -> scaling_rounds callable for every importable kernel."""
    kernels = {"python": fallback.scaling_rounds}
    if _compiled is not None:
        kernels["compiled"] = _compiled.scaling_rounds
    return kernels


def get_kernel(name=None):
    """Resolve a kernel by name; ``None`` means the import-time default."""
    if name is None:
        return scaling_rounds
    try:
        return available_kernels()[name]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}") from None


def resolve_threads(parallel):
    """Thread count for a kernel call honoring OTCP_NUM_THREADS."""
    if not parallel:
        return 1
    env = os.environ.get("OTCP_NUM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
