"""Kernel backend selection.

The compiled Cython core is preferred when present; the pure-NumPy
fallback is used otherwise. KDLAB_BACKEND=compiled|numpy|auto forces a
choice ("compiled" raises if the extension is missing). Both backends
implement identical math; results agree to floating-point noise but are
not guaranteed bit-identical across backends, so reproducibility
contracts hold per backend.
"""

import os

from kdlab import _kernels_np


def _select():
    choice = os.environ.get("KDLAB_BACKEND", "auto").lower()
    if choice not in ("auto", "compiled", "numpy"):
        raise ValueError(f"KDLAB_BACKEND must be auto|compiled|numpy, got {choice!r}")
    if choice == "numpy":
        return _kernels_np
    try:
        from kdlab import _kernels
        return _kernels
    except ImportError:
        if choice == "compiled":
            raise ImportError(
                "KDLAB_BACKEND=compiled but the kdlab._kernels extension is not built"
            ) from None
        return _kernels_np


kernels = _select()
BACKEND_NAME = kernels.BACKEND_NAME
