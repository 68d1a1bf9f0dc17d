"""Backend selection for the hot loops.

The compiled extension is used when it imports; ``CRL_PURE_PYTHON=1`` forces
the numpy fallback.
"""
import os

from . import _kernels_py

if os.environ.get("CRL_PURE_PYTHON") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on build
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

ggg = _impl.ggg
mf_correlate = _impl.mf_correlate
supra_runs = _impl.supra_runs


def backends():
    """Every importable backend, keyed by name."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels

        found["cython"] = _kernels
    except ImportError:  # pragma: no cover
        pass
    return found
