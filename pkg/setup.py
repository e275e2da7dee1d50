import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "jordan_exit._kernels",
        ["src/jordan_exit/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        # no FMA contraction: the pure-Python fallback must match bit for bit
        extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
        # a failed compile leaves the pure-Python fallback in place
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
