"""Kernel backend selection.

The compiled Cython kernels are used when the extension was built; the numpy
kernels are the fallback. ``STSL_BACKEND=python`` or ``STSL_BACKEND=compiled``
forces a choice at import time.
"""

import os
from types import ModuleType

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("compiled", "python")


def available() -> list[str]:
    return [name for name in BACKENDS if name == "python" or _compiled is not None]


def _module(name: str) -> ModuleType:
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; reinstall with Cython available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")


kernels: ModuleType = _kernels_py
name = "python"


def use(backend: str) -> None:
    """Switch the kernels used by every tensor op in this process."""
    global kernels, name
    kernels = _module(backend)
    name = backend


_requested = os.environ.get("STSL_BACKEND", "auto").strip().lower()
if _requested in ("", "auto"):
    use("compiled" if _compiled is not None else "python")
else:
    use(_requested)
