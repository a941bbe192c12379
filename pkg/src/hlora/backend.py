"""Selection of the hot-kernel backend.

The package ships two interchangeable kernel sets: numba-compiled
loops (``kernels_numba``) and a pure-numpy fallback
(``kernels_numpy``). The environment variable ``HLORA_BACKEND``
chooses at import time:

    auto   (default) use numba when importable, else numpy
    numba  require the compiled kernels, fail loudly if missing
    numpy  force the fallback (useful for verification and debugging)

``set_backend`` re-selects at runtime; tests and the benchmark use it
to compare both paths in one process. Results are deterministic within
a backend; across backends they agree to rounding noise only.
"""

from __future__ import annotations

import os
import warnings

from . import kernels_numpy

_VALID = ("auto", "numba", "numpy")
_impl = None


def _load_numba_impl():
    from . import kernels_numba

    return kernels_numba


def set_backend(name: str):
    """Select the kernel implementation; returns the chosen module."""
    global _impl
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}; expected one of {_VALID}")
    if name == "numpy":
        _impl = kernels_numpy
    elif name == "numba":
        _impl = _load_numba_impl()
    else:
        try:
            _impl = _load_numba_impl()
        except Exception as exc:  # pragma: no cover - depends on environment
            warnings.warn(f"numba kernels unavailable ({exc}); falling back to numpy")
            _impl = kernels_numpy
    return _impl


def get_impl():
    """Module providing the active kernel set."""
    global _impl
    if _impl is None:
        set_backend(os.environ.get("HLORA_BACKEND", "auto").lower())
    return _impl


def backend_name() -> str:
    return get_impl().NAME
