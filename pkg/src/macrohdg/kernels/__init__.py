"""Pointwise flux/stabilization kernels with selectable backend.

The numba backend jit-compiles the hot per-quadrature-point loops; the numpy
backend is a vectorized twin used as a fallback and as a cross-check.  Select
with the environment variable ``MACROHDG_KERNELS`` ("numba" or "numpy");
default is numba when importable.
"""

from __future__ import annotations

import os

from . import numpy_backend

_KERNEL_NAMES = (
    "primitive_arrays",
    "euler_flux",
    "euler_jacobian",
    "viscous_flux",
    "viscous_jacobians",
    "stab_matrices",
    "supg_tau_values",
)


def _load_backend(name: str):
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        from . import numba_backend

        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r} (use 'numba' or 'numpy')")


def _default_name() -> str:
    req = os.environ.get("MACROHDG_KERNELS", "").strip().lower()
    if req:
        return req
    try:
        import numba  # noqa: F401

        return "numba"
    except ImportError:
        return "numpy"


backend_name = _default_name()
backend = _load_backend(backend_name)


def set_backend(name: str) -> None:
    """Switch kernel backend at runtime (mainly for tests and benchmarks)."""
    global backend, backend_name
    backend = _load_backend(name)
    backend_name = name


def get_backend(name: str | None = None):
    return backend if name is None else _load_backend(name)


def set_workers(n: int) -> None:
    """Cap the number of threads used by jitted kernels."""
    if backend_name == "numba":
        import numba

        numba.set_num_threads(max(1, int(n)))
