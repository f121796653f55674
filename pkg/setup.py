import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # fallback backend only
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("POLYBRANCH_NO_EXT"):
    extensions = [
        Extension(
            "polybranch._kernels",
            ["src/polybranch/_kernels.pyx"],
            include_dirs=[np.get_include()],
            # no fast-math / contraction: results must match the Python fallback bit for bit
            extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
