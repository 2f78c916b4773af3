"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise (or when
``CCCOMPACT_PURE=1``) the numpy/heapq implementations in ``_pure`` are used.
Both expose the same functions.
"""
import os

from . import _pure

if os.environ.get("CCCOMPACT_PURE", "") not in ("", "0"):
    backend = _pure
else:
    try:
        from . import _core as backend
    except ImportError:  # extension not built
        backend = _pure

BACKEND = backend.BACKEND
eval_coeffs = backend.eval_coeffs
eval_coeffs_many = backend.eval_coeffs_many
rk4_path = backend.rk4_path
lattice_edges = backend.lattice_edges
dijkstra = backend.dijkstra
bounded_balls = backend.bounded_balls


def available_backends():
    out = {"pure": _pure}
    try:
        from . import _core
        out["compiled"] = _core
    except ImportError:
        pass
    return out
