import numpy as np
from setuptools import Extension, setup
from Cython.Build import cythonize

ext_module = Extension(
    "sonoplan.kernels._native",
    ["src/sonoplan/kernels/_native.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize(ext_module, language_level=3))
