"""Build script for the compiled kernel extension.

The extension is optional: if it cannot be built the package falls back to
the pure-numpy kernels at import time (see omnifuse.backend).
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"WARNING: compiled kernels not built ({exc}); "
                  "falling back to pure-python backend", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"WARNING: failed to compile {ext.name} ({exc}); "
                  "falling back to pure-python backend", file=sys.stderr)


def make_ext_modules():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "omnifuse._kernels",
        ["src/omnifuse/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        # -ffp-contract=off keeps float results bit-identical to the numpy
        # fallback (no FMA contraction).
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(
    ext_modules=make_ext_modules(),
    cmdclass={"build_ext": OptionalBuildExt},
)
