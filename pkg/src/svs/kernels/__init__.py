"""Hot-loop kernels with a compiled fast path and a pure-Python fallback.

Backend choice happens once at import. ``SVS_KERNEL_BACKEND`` overrides:
"auto" (default) prefers the compiled extension, "python" forces the
fallback, "compiled" insists on the extension and fails loudly if it is
missing. ``BACKEND`` records what was picked.
"""
from __future__ import annotations

import os

from . import _reference

_requested = os.environ.get("SVS_KERNEL_BACKEND", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise ValueError(
        f"SVS_KERNEL_BACKEND must be auto, compiled or python, got {_requested!r}"
    )

_compiled = None
if _requested in ("auto", "compiled"):
    try:
        from . import _core as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None
    if _requested == "compiled" and _compiled is None:
        raise ImportError(
            "SVS_KERNEL_BACKEND=compiled but the extension is not built; "
            "reinstall the package with a C compiler available"
        )

if _compiled is not None:
    BACKEND = "compiled"
    iou_matrix = _compiled.iou_matrix
    solve_assignment = _compiled.solve_assignment
    kalman_predict = _compiled.kalman_predict
    kalman_update = _compiled.kalman_update
else:
    BACKEND = "python"
    iou_matrix = _reference.iou_matrix
    solve_assignment = _reference.solve_assignment
    kalman_predict = _reference.kalman_predict
    kalman_update = _reference.kalman_update


def available_backends() -> dict[str, object]:
    """Name -> module for every importable backend (for tests/benchmarks)."""
    out = {"python": _reference}
    try:
        from . import _core  # type: ignore[attr-defined]
        out["compiled"] = _core
    except ImportError:
        pass
    return out


__all__ = [
    "BACKEND",
    "iou_matrix",
    "solve_assignment",
    "kalman_predict",
    "kalman_update",
    "available_backends",
]
