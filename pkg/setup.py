"""Build script for the optional compiled kernels.

The extension is optional: if Cython or a C compiler is missing, the
package installs without it and uses the NumPy kernels.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "mvsfs._kernels",
                ["src/mvsfs/_kernels.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
