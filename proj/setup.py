"""Builds the _mvdpp extension through CMake and places it in the package."""

import shutil
import subprocess
import sys
from pathlib import Path

import pybind11
from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.extension import Extension


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source = Path(__file__).resolve().parent
        build_dir = Path(self.build_temp).resolve()
        build_dir.mkdir(parents=True, exist_ok=True)
        subprocess.check_call(
            [
                "cmake",
                "-S", str(source),
                "-B", str(build_dir),
                "-DCMAKE_BUILD_TYPE=Release",
                "-DMVDPP_BUILD_TESTS=OFF",
                f"-Dpybind11_DIR={pybind11.get_cmake_dir()}",
                f"-DPYTHON_EXECUTABLE={sys.executable}",
            ]
        )
        subprocess.check_call(["cmake", "--build", str(build_dir), "--target", "_mvdpp"])
        built = sorted(build_dir.glob("_mvdpp*.so")) + sorted(build_dir.glob("_mvdpp*.pyd"))
        if not built:
            raise RuntimeError("cmake did not produce the _mvdpp extension")
        target = Path(self.get_ext_fullpath(ext.name))
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(built[0], target)


setup(
    ext_modules=[CMakeExtension("mvdpp._mvdpp")],
    cmdclass={"build_ext": CMakeBuild},
)
