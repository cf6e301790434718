"""Hot-loop kernels: compiled extension when available, NumPy otherwise.

Set ``PANORPCA_PURE_PYTHON=1`` to force the NumPy fallback.
"""

import os

from . import _fallback

BACKEND = "python"

if os.environ.get("PANORPCA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

weighted_diff = _impl.weighted_diff
weighted_diff_adjoint = _impl.weighted_diff_adjoint
normal_apply = _impl.normal_apply
warp_bilinear = _impl.warp_bilinear
ncc_scores = _impl.ncc_scores

__all__ = ["BACKEND", "weighted_diff", "weighted_diff_adjoint",
           "normal_apply", "warp_bilinear", "ncc_scores"]
