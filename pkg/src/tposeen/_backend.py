"""Selects the compiled kernels when the extension is built, numpy otherwise."""

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

NAME = "cython" if _compiled is not None else "python"
kernels = BACKENDS[NAME]


def get(name=None):
    """The kernel module called ``name``, or the active one."""
    if name is None:
        return kernels
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} is not available; have {sorted(BACKENDS)}")
    return BACKENDS[name]
