"""Build the optional compiled kernels; the package works without them."""

import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using the numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using the numpy fallback")


def extensions():
    if os.environ.get("MEC_NO_EXTENSION"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    exts = cythonize(
        "src/mec/_kernels.pyx",
        compiler_directives={"language_level": "3"},
        quiet=True,
    )
    for ext in exts:
        ext.include_dirs.append(numpy.get_include())
        ext.define_macros.append(("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"))
        if sys.platform != "win32":
            # no fused multiply-add: distance sums must round like the numpy fallback
            ext.extra_compile_args.append("-ffp-contract=off")
    return exts


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
