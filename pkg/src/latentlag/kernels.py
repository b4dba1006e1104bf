"""Backend selection for the hot loops.

The compiled extension is used when importable; set ``LATENTLAG_PURE_PYTHON=1``
to force the pure-Python fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_compiled = None
if os.environ.get("LATENTLAG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py


def _compiled_available() -> bool:
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True


HAVE_COMPILED = _compiled is not None or _compiled_available()

simulate_path = _impl.simulate_path
lasso_cd_gram = _impl.lasso_cd_gram


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` ('cython' or 'python'); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            from . import _kernels  # raises ImportError if unbuilt

            return _kernels
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
