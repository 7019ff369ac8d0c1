"""Build hooks for the optional Cython kernel extension.

The package works without the extension (pure numpy fallback); any build
failure here is deliberately non-fatal.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "activekg.diffnum._kernels_cy",
                ["src/activekg/diffnum/_kernels_cy.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    import sys

    print(f"activekg: skipping Cython extension build ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
