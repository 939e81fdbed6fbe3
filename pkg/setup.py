"""Build script: compiles the optional Cython kernel core.

Set KDLAB_PURE=1 to skip the extension; the package then runs on the
pure-NumPy kernel fallback selected at import time.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("KDLAB_PURE", "0") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "kdlab._kernels",
                    ["src/kdlab/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
