"""Build the optional Cython kernels.

The package works without them; ``parcellate._backend`` falls back to the
pure-Python kernels when the extension is missing.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("PARCELLATE_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "parcellate._kernels",
                    ["src/parcellate/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # no FMA contraction: keeps results bit-identical to the fallback
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
