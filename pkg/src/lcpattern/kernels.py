"""Hot-loop kernels, compiled when available.

The Cython extension ``lcpattern._kernels`` is preferred. If it is missing
(not built) or ``LCPATTERN_PURE_PYTHON=1`` is set in the environment, the
NumPy implementation in ``lcpattern._kernels_py`` is used instead. ``BACKEND``
names whichever was selected.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("LCPATTERN_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

dtw_distance = _impl.dtw_distance
dtw_path = _impl.dtw_path
forward_backward = _impl.forward_backward
viterbi = _impl.viterbi

__all__ = ["BACKEND", "dtw_distance", "dtw_path", "forward_backward", "viterbi"]
