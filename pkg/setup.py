"""Build the optional compiled persistence kernel.

If Cython or a C++ compiler is missing the package still installs; the
pure-Python kernel is selected at import time instead.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("kleinvae.tda._reduce", ["src/kleinvae/tda/_reduce.pyx"],
                   extra_compile_args=["-O3", "-std=c++17"])],
        language_level=3,
    )
except ImportError:  # pragma: no cover - build without Cython
    pass

setup(ext_modules=ext_modules)
