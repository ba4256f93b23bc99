"""Hot pairwise-similarity kernels with backend selection at import.

The compiled Cython extension is preferred when available; the
vectorized NumPy implementation is the fallback. Set
``DISPLAB_KERNELS=numpy`` or ``DISPLAB_KERNELS=cython`` to force one
(the latter raises if the extension was not built).
"""

import os

from . import numpy_backend

_choice = os.environ.get("DISPLAB_KERNELS", "auto").lower()
if _choice not in ("auto", "cython", "numpy"):
    raise RuntimeError(f"DISPLAB_KERNELS must be auto|cython|numpy, got {_choice!r}")

_impl = None
if _choice in ("auto", "cython"):
    try:
        from . import cykernels as _impl
        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
if _impl is None:
    _impl = numpy_backend
    BACKEND = "numpy"

pairwise_cosine = _impl.pairwise_cosine
dispersion_forward = _impl.dispersion_forward
dispersion_backward = _impl.dispersion_backward


def available_backends():
    out = ["numpy"]
    try:
        from . import cykernels  # noqa: F401
        out.insert(0, "cython")
    except ImportError:
        pass
    return out


def get_backend(name: str):
    """Return the backend module by name (for parity tests and benchmarks)."""
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        from . import cykernels
        return cykernels
    raise ValueError(f"unknown kernel backend {name!r}")
