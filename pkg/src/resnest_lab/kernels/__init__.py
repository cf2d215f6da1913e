"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The numba backend is used when numba imports cleanly, unless the
environment variable ``RESNEST_LAB_DISABLE_NUMBA`` is set to a truthy value
(``1``, ``true``, ``yes``, ``on``) before the package is imported.

Both backends expose the same functions:

``kron(a, b)``
    Kronecker product of two 2-D float arrays.
``jacobi_eigh(a, max_sweeps)``
    Cyclic Jacobi eigensolver, returns ``(eigenvalues, eigenvectors, sweeps)``.
``jacobi_svd(a, max_sweeps)``
    One-sided Jacobi SVD of a tall matrix, returns ``(u, s, v, sweeps)``.
``pphi_train(...)``
    Full-batch GD/Nesterov loop over the squared-loss prediction weights.
"""

import os
from types import ModuleType

from . import _numpy

STATUS_CONVERGED = _numpy.STATUS_CONVERGED
STATUS_MAX_ITERS = _numpy.STATUS_MAX_ITERS
STATUS_DIVERGED = _numpy.STATUS_DIVERGED

_TRUTHY = {"1", "true", "yes", "on"}


def numba_disabled() -> bool:
    return os.environ.get("RESNEST_LAB_DISABLE_NUMBA", "").strip().lower() in _TRUTHY


def _load_numba() -> ModuleType | None:
    try:
        from . import _numba
    except ImportError:
        return None
    return _numba


_numba_impl = None if numba_disabled() else _load_numba()
_impl = _numba_impl if _numba_impl is not None else _numpy

BACKEND = "numba" if _impl is not _numpy else "numpy"
NUMBA_AVAILABLE = _numba_impl is not None or (numba_disabled() and _load_numba() is not None)


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ('numba' or 'numpy'); default is the active one."""
    if name is None:
        return _impl
    if name == "numpy":
        return _numpy
    if name == "numba":
        mod = _numba_impl if _numba_impl is not None else _load_numba()
        if mod is None:
            raise ImportError("numba backend requested but numba is not importable")
        return mod
    raise ValueError(f"unknown kernel backend {name!r}")


kron = _impl.kron
jacobi_eigh = _impl.jacobi_eigh
jacobi_svd = _impl.jacobi_svd
pphi_train = _impl.pphi_train

__all__ = [
    "BACKEND",
    "NUMBA_AVAILABLE",
    "STATUS_CONVERGED",
    "STATUS_DIVERGED",
    "STATUS_MAX_ITERS",
    "get_backend",
    "jacobi_eigh",
    "jacobi_svd",
    "kron",
    "numba_disabled",
    "pphi_train",
]
