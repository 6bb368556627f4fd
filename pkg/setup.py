import os

from setuptools import setup

# The compiled kernel module is optional: the package falls back to the
# numpy implementations in trimix._kernels_np when it is absent.
# Set TRIMIX_NO_EXT=1 to skip the extension build entirely.
ext_modules = []
if not os.environ.get("TRIMIX_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "trimix._kernels",
                    ["src/trimix/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
