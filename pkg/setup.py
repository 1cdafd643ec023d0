import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "betactl._loop",
        ["src/betactl/_loop.pyx"],
        include_dirs=[np.get_include()],
        # no FMA contraction / fast-math: results must match the Python twin bit for bit
        extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
