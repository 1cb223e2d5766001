"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. ``REEFMAP_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os

if os.environ.get("REEFMAP_BACKEND", "").lower() == "python":
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        from . import _pykernels as _impl

BACKEND: str = _impl.BACKEND
extract_boundaries = _impl.extract_boundaries
integrate_cells = _impl.integrate_cells
fuse_grid = _impl.fuse_grid
eval_heightfield = _impl.eval_heightfield
raycast = _impl.raycast


def available_backends() -> dict:
    """Name -> module for every backend that imports in this environment."""
    from . import _pykernels

    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
