"""Kernel backend selection.

The compiled extension is preferred when importable; the pure-numpy fallback
is always available. ``SYN2REAL_KERNELS=python|compiled`` forces a backend
(forcing ``compiled`` fails loudly if the extension was not built). Both
backends agree to float32 rounding; within one backend results are bitwise
reproducible.
"""

import os

from . import pykernels

_FORCED = os.environ.get("SYN2REAL_KERNELS", "").strip().lower()

if _FORCED == "python":
    _impl = pykernels
else:
    try:
        from .. import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        if _FORCED == "compiled":
            raise ImportError(
                "SYN2REAL_KERNELS=compiled but the extension is not built; "
                "reinstall with Cython available")
        _impl = pykernels

BACKEND: str = _impl.BACKEND
matmul = _impl.matmul
conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd_input = _impl.conv2d_bwd_input
conv2d_bwd_weight = _impl.conv2d_bwd_weight


def get_backends() -> dict:
    """Name -> module for every importable backend (used by the benchmark)."""
    found = {"python": pykernels}
    try:
        from .. import _ckernels
        found["compiled"] = _ckernels
    except ImportError:
        pass
    return found
