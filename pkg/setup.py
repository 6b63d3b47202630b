"""Build script for the compiled event-warp kernels.

The package works without the extension (a NumPy fallback is selected at
import time); building it just makes contrast maximization much faster.
"""
import numpy as np
from setuptools import Extension, setup
from Cython.Build import cythonize

ext_modules = [
    Extension(
        "evlcalib._kernels._warp_cy",
        sources=["src/evlcalib/_kernels/_warp_cy.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        ext_modules,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
