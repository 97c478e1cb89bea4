"""Backend selection for the backward-sweep kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over.  Set ``RBSDELAB_BACKEND=python`` to force the
fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS: dict[str, ModuleType] = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled


def _select() -> str:
    wanted = os.environ.get("RBSDELAB_BACKEND", "").strip().lower()
    if wanted:
        if wanted not in BACKENDS:
            raise ImportError(f"RBSDELAB_BACKEND={wanted!r} unavailable; have {sorted(BACKENDS)}")
        return wanted
    return "compiled" if "compiled" in BACKENDS else "python"


_active = _select()


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {sorted(BACKENDS)}")
    _active = name


def get(name: str | None = None) -> ModuleType:
    return BACKENDS[name or _active]


def sweep(*args, backend: str | None = None):
    return get(backend).sweep(*args)


def solve_root(*args, backend: str | None = None) -> float:
    return get(backend).solve_root(*args)
