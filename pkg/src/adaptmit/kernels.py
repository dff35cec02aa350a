"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations in ``_pykernels`` are used. Setting the environment
variable ``ADAPTMIT_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("ADAPTMIT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

tally_shots = _impl.tally_shots
bmu_batch = _impl.bmu_batch
som_train_steps = _impl.som_train_steps

__all__ = ["BACKEND", "tally_shots", "bmu_batch", "som_train_steps"]
