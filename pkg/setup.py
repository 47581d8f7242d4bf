import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "ordernet._ckernels",
        ["src/ordernet/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # no-trapping-math lets the relu selects vectorise; finite results are unchanged
        extra_compile_args=["-O3", "-fno-trapping-math", "-ffp-contract=off"],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
