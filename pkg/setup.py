import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("VOLCLF_NO_EXT"):
    from Cython.Build import cythonize

    ext = Extension(
        "volclf.tensor_engine._ckernels",
        ["src/volclf/tensor_engine/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
    ext_modules = cythonize([ext], language_level="3")

setup(ext_modules=ext_modules)
