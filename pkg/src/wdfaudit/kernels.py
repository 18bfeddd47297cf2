"""Backend selection for the hot loops.

The compiled extension is preferred; set ``WDFAUDIT_PURE_PYTHON=1`` to force
the pure-Python implementations.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

try:
    from . import _ckernels  # noqa: F401

    HAVE_CYTHON = True
except ImportError:  # pragma: no cover - depends on the build
    HAVE_CYTHON = False

if not os.environ.get("WDFAUDIT_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels


def get_impl(backend=None):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {backend!r}")


def fast_sweep(phi, frozen, h, max_iter=100, tol=1e-12, backend=None):
    """In-place fast sweeping on a (n0, n1, n2) grid; returns iterations used."""
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    if phi.ndim != 3:
        raise ValueError("phi must be a 3-D array; pad missing axes with length 1")
    frozen = np.ascontiguousarray(frozen, dtype=np.uint8)
    iters = get_impl(backend).fast_sweep(phi, frozen, float(h), int(max_iter), float(tol))
    return phi, int(iters)


def greedy_fill(order, cost, capacity, backend=None):
    """Greedy fractional fill; returns (xi, marginal position or -1, leftover)."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    order = np.ascontiguousarray(order, dtype=np.int_)
    xi = np.zeros(cost.shape[0], dtype=np.float64)
    marginal, left = get_impl(backend).greedy_fill(order, cost, float(capacity), xi)
    return xi, int(marginal), float(left)
