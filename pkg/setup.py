"""Build the optional compiled SGD kernel; the package works without it."""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("crbounds._sgd_core", ["src/crbounds/_sgd_core.pyx"],
                   include_dirs=[np.get_include()], optional=True,
                   define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
