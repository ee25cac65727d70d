"""Builds the optional Cython rasterizer kernels.

The package works without them (a numpy fallback is selected at import);
run `python setup.py build_ext --inplace` or a normal pip install to get
the compiled kernels.
"""

import numpy as np
from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "splatpipe.raster._kernels_cy",
                ["src/splatpipe/raster/_kernels_cy.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
