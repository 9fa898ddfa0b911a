"""Build script for the optional compiled kernel extension.

The package works without the extension (pure-numpy fallbacks are selected
at import time), so a failed compile only costs speed, never correctness.
Build in place with:  python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "chickface._kernels_c",
                ["src/chickface/_kernels_c.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    print(f"chickface: skipping compiled kernels ({exc}); numpy fallback will be used")

setup(ext_modules=ext_modules)
