import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; dsms falls back to numpy kernels
    cythonize = None

# -ffast-math would link crtfastmath and flip FTZ/DAZ for the whole process.
CFLAGS = [
    "-O3",
    "-fno-math-errno",
    "-fassociative-math",
    "-fno-signed-zeros",
    "-fno-trapping-math",
]
if os.environ.get("DSMS_PORTABLE_BUILD") != "1":
    CFLAGS.append("-march=native")

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "dsms.diffcore._conv",
                ["src/dsms/diffcore/_conv.pyx"],
                depends=["src/dsms/diffcore/_conv_kernels.h"],
                include_dirs=[np.get_include(), "src/dsms/diffcore"],
                extra_compile_args=CFLAGS,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
