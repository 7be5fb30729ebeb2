"""Build script for the optional Cython extension.

The package works without the extension (a NumPy fallback is selected at
import time), so the extension is marked optional: a failed compile must not
break installation.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "dosebo._sqexp",
                sources=["src/dosebo/_sqexp.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
