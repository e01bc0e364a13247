"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the
numpy ``_fallback``.  ``MCINVERSE_BACKEND=python`` forces the fallback
(handy for benchmarks and for cross-checking the two).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from . import _fallback

_impl = _fallback
BACKEND = "python"

if os.environ.get("MCINVERSE_BACKEND", "").lower() != "python":
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

_threads = max(1, int(os.environ.get("MCINVERSE_THREADS", "1")))


def set_threads(n: int) -> None:
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads


def kernels(name: str | None = None):
    """Return the active kernel module, or ``_fallback``/``_core`` by name."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    from . import _core

    return _core


def run_chunked(fn, n: int, *args, module=None) -> None:
    """Call ``fn(*args, r0, r1)`` over [0, n), split across worker threads.

    Outputs are written per index, so the result does not depend on the
    thread count.
    """
    threads = _threads if (module or _impl) is not _fallback else 1
    if threads <= 1 or n < 4096:
        fn(*args, 0, n)
        return
    bounds = [n * i // threads for i in range(threads + 1)]
    with ThreadPoolExecutor(threads) as pool:
        futs = [pool.submit(fn, *args, bounds[i], bounds[i + 1]) for i in range(threads)]
        for f in futs:
            f.result()
