"""Build script: compiles the optional Cython kernel extension when possible.

The package is fully functional without the extension; `wattsplit._kernels`
falls back to the NumPy implementations at import time.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "wattsplit._kernels._ck",
                ["src/wattsplit/_kernels/_ck.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    print("Cython or NumPy unavailable at build time; skipping compiled kernels.")

setup(ext_modules=ext_modules)
