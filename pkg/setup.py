import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# STSL_NO_EXT=1 builds a pure-Python install (the numpy kernels are used).
if os.environ.get("STSL_NO_EXT"):
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "stsl._kernels",
                ["src/stsl/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
