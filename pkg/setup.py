from setuptools import Extension, setup
from Cython.Build import cythonize

# optional=True: a failed compile leaves the pure-NumPy kernels in charge
ext_modules = cythonize(
    [
        Extension(
            "bidiflow._ckernels",
            ["src/bidiflow/_ckernels.pyx"],
            extra_compile_args=["-O3"],
            optional=True,
        )
    ],
    compiler_directives={
        "language_level": "3",
        "boundscheck": False,
        "wraparound": False,
        "cdivision": True,
        "initializedcheck": False,
    },
)

setup(ext_modules=ext_modules)
