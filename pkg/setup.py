import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# The compiled scaling kernel is optional at runtime: otcp._kernels falls back
# to a pure-numpy implementation when the extension is absent.
ext = Extension(
    "otcp._kernels._scaling",
    ["src/otcp/_kernels/_scaling.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3", "-fopenmp"],
    extra_link_args=["-fopenmp"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], language_level=3))
