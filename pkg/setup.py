"""Build script for the optional compiled kernel core.

The extension accelerates the two training hot spots that numpy does not
hand off to BLAS: embedding-gradient scatter-add and the fused Adam update.
`xdboost.kernels` falls back to pure numpy when the extension is missing,
so a failed compile only costs speed, never correctness.

`-ffp-contract=off` keeps the compiled kernels bit-identical to the numpy
fallback (no FMA contraction), which the test suite asserts.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "xdboost._native",
                ["src/xdboost/_native.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
