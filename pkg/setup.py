"""Build script for the optional compiled training kernel.

The package works without the extension (a pure-numpy backend is selected
at import time); building it just makes micro-training faster.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - source-only install
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "fairmargin._core",
                ["src/fairmargin/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
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
