"""Build script for the compiled kernel core.

The extension is optional at runtime: stdense falls back to the pure numpy
kernels when the compiled module is absent. Set STDENSE_SKIP_BUILD=1 to
install without a C compiler.
"""

import os

from setuptools import setup

if os.environ.get("STDENSE_SKIP_BUILD") == "1":
    setup()
else:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = [
        Extension(
            "stdense._kernels._fast",
            ["src/stdense/_kernels/_fast.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3", "-march=native"],
        )
    ]
    setup(
        ext_modules=cythonize(
            extensions, compiler_directives={"language_level": "3"}
        )
    )
