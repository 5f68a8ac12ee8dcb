"""Build the optional Cython core; the package works without it."""
import os
import sys

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("HIERCROP_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        print("Cython/numpy unavailable, skipping compiled core", file=sys.stderr)
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "hiercrop._ext",
                    ["src/hiercrop/_ext.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"] if sys.platform != "win32" else ["/O2"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
