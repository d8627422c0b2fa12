"""Runtime performance tuning for throttled/containerized CPUs.

Two effects matter on small shared boxes: glibc returning large buffers to
the kernel after every op (page-fault churn on the next allocation), and
BLAS thread pools that lose to their own synchronization at our GEMM sizes.
Both are tamed here; calling :func:`apply` twice is harmless.
"""

from __future__ import annotations

import ctypes
import ctypes.util

_applied = False

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_M_MMAP_MAX = -4


def _tune_malloc() -> None:
    try:
        path = ctypes.util.find_library("c")
        libc = ctypes.CDLL(path) if path else ctypes.CDLL(None)
        libc.mallopt(_M_TRIM_THRESHOLD, ctypes.c_int(2**31 - 1).value)
        libc.mallopt(_M_MMAP_THRESHOLD, ctypes.c_int(2**31 - 1).value)
        libc.mallopt(_M_MMAP_MAX, 0)
    except (OSError, AttributeError):
        pass  # non-glibc platform; nothing to tune


def _tune_blas_threads(n: int = 1) -> None:
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=n, user_api="blas")
    except Exception:
        pass  # best effort; OPENBLAS_NUM_THREADS still works


def apply(blas_threads: int = 1) -> None:
    """Idempotent: keep freed buffers mapped, pin BLAS to ``blas_threads``."""
    global _applied
    _tune_blas_threads(blas_threads)
    if _applied:
        return
    _tune_malloc()
    _applied = True
