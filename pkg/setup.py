"""Build the optional Cython core.

The package works without it: ``mcinverse._backend`` falls back to the
numpy kernels when ``mcinverse._core`` cannot be imported.

    pip install -e . --no-build-isolation
    python setup.py build_ext --inplace
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("MCINVERSE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:  # pure-Python install
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "mcinverse._core",
                    sources=["src/mcinverse/_core.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
                "language_level": "3",
            },
        )

setup(ext_modules=ext_modules)
