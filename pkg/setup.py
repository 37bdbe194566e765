"""Build script: compiles the optional Cython rasterizer kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed, never functionality.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Swallow compiler failures so the pure-Python install still succeeds."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"WARNING: compiled rasterizer kernel not built ({exc}); "
                  "falling back to the numpy backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"WARNING: failed to compile {ext.name} ({exc}); "
                  "falling back to the numpy backend")


def make_extensions():
    if os.environ.get("SKETCH3D_SKIP_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "sketch3d.render._rasterkern",
        sources=["src/sketch3d/render/_rasterkern.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
