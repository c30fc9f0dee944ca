"""Build the optional compiled core.

A missing Cython or a failing compiler leaves the pure numpy fallback in
place; the package still installs.
"""
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, headers missing, ...
            sys.stderr.write(f"warning: compiled core not built ({exc}); using numpy fallback\n")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            sys.stderr.write(f"warning: failed to build {ext.name} ({exc}); using numpy fallback\n")


def _extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        sys.stderr.write("warning: Cython not available; using numpy fallback\n")
        return []
    from setuptools import Extension

    ext = Extension(
        "gpfollow._core._ext",
        ["src/gpfollow/_core/_ext.pyx"],
        libraries=["m"] if sys.platform != "win32" else [],
        extra_compile_args=["-O3"] if sys.platform != "win32" else [],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})
