"""Build script: compiles the optional Cython evaluation core.

The package works without the extension (a NumPy fallback is selected at
import time), so any build failure here degrades to a warning instead of
aborting the install.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "cholgauss._kernels",
                ["src/cholgauss/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    import warnings

    warnings.warn(f"Cython core not built ({exc}); using the NumPy fallback.")

setup(ext_modules=ext_modules)
