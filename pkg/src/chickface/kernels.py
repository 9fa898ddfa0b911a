"""Kernel backend selection.

Prefers the compiled Cython extension; falls back to the numpy
implementation when the extension is missing or when the environment
variable CHICKFACE_PURE_PYTHON=1 forces the fallback (useful for the
parity tests and the kernel benchmark).
"""

from __future__ import annotations

import os

if os.environ.get("CHICKFACE_PURE_PYTHON") == "1":
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels_c as _impl  # type: ignore[no-redef]

        BACKEND = "c"
    except ImportError:
        from . import _kernels_py as _impl  # type: ignore[no-redef]

        BACKEND = "python"

GAUSSIAN_TRUNCATE = _impl.GAUSSIAN_TRUNCATE
warp_affine_bilinear = _impl.warp_affine_bilinear
render_gaussian_heatmaps = _impl.render_gaussian_heatmaps
decode_peaks = _impl.decode_peaks
nms_keep = _impl.nms_keep
laplacian_variance = _impl.laplacian_variance
