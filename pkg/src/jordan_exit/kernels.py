"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the pure-Python
fallback.  ``JORDAN_EXIT_BACKEND=python`` forces the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("JORDAN_EXIT_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels


def get(backend: str | None = None):
    """Kernel module for ``backend`` (``"cython"``, ``"python"`` or the default)."""
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {backend!r}")


def available() -> list[str]:
    out = ["python"]
    try:
        from . import _kernels  # noqa: F401

        out.append("cython")
    except ImportError:  # pragma: no cover
        pass
    return out
