"""Build hook for the optional compiled access path.

The package is pure Python and fully functional without this extension;
compiling it only makes large runs faster. Build in place with:

    python3 setup.py build_ext --inplace

When Cython is unavailable the extension list is empty and installation
proceeds with the interpreted path only.
"""

from setuptools import setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        ["src/tlesim/_fastcore.pyx"],
        language_level="3",
    )

setup(ext_modules=ext_modules)
