"""Build script: compiles the optional integer-search kernels.

The package works without the extension (a pure-Python fallback with the
same semantics is selected at import time), so a missing compiler or Cython
degrades the install to pure Python instead of failing it.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "byzwire._kernels._core",
                sources=["src/byzwire/_kernels/_core.pyx"],
                extra_compile_args=["-O2"],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

try:
    setup(ext_modules=extensions)
except Exception:
    # Toolchain trouble (no C compiler, broken headers): install pure.
    setup(ext_modules=[])
