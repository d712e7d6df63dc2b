"""Build script for the optional compiled kernels.

The package works without a C compiler: if Cython or the build fails, the
pure-numpy kernels in ``fetaprune._pykernels`` are used at import time.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("FETAPRUNE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "fetaprune._ckernels",
                    ["src/fetaprune/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError as exc:  # pragma: no cover
        print(f"fetaprune: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
