"""Backend selection for the simulation hot loops.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. Set ``FORMATION_RL_PURE_PYTHON=1`` to force the fallback.
"""

import os

from formation_rl import _kernels_py

if os.environ.get("FORMATION_RL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from formation_rl import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

mix_batch = _impl.mix_batch
physics_step_batch = _impl.physics_step_batch
control_step_batch = _impl.control_step_batch
static_distance_batch = _impl.static_distance_batch

__all__ = [
    "BACKEND",
    "mix_batch",
    "physics_step_batch",
    "control_step_batch",
    "static_distance_batch",
]
