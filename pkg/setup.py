import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "skgfat.numcore._convpool",
                ["src/skgfat/numcore/_convpool.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-march=native"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

# The compiled kernels are an accelerator, not a requirement: the package
# falls back to the numpy implementations when the extension is absent.
setup(ext_modules=extensions)
