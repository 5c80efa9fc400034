"""Build the optional Cython kernels.

The package works without them: ``mfglab.kernels`` falls back to NumPy
implementations when the extension cannot be imported.  Set
``MFGLAB_NO_EXT=1`` to skip compilation entirely.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if not os.environ.get("MFGLAB_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
        ext_modules = cythonize(
            [
                Extension(
                    "mfglab._kernels",
                    ["src/mfglab/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # no FMA contraction: summation must match the NumPy path bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"] + openmp,
                    extra_link_args=openmp,
                )
            ],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"mfglab: building without compiled kernels ({exc})", file=sys.stderr)
        ext_modules = []

setup(ext_modules=ext_modules)
