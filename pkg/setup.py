from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "voicemorph.kernels._convcore",
                ["src/voicemorph/kernels/_convcore.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # Without Cython the package still works on the pure-numpy backend.
    extensions = []

setup(ext_modules=extensions)

# python setup.py build_ext --inplace
