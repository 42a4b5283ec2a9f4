"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure-Python fallback is selected
at import time), so a missing compiler or Cython only costs speed.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SVS_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "svs.kernels._core",
                    ["src/svs/kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                )
            ],
            language_level="3",
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
