import os

from setuptools import Extension, setup

# The compiled kernels are optional; without Cython/numpy headers the package
# installs pure-Python and selects the fallback at import.
ext_modules = []
if os.environ.get("SUTUREGRASP_NO_EXT", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "suturegrasp._speedups",
                    ["src/suturegrasp/_speedups.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
