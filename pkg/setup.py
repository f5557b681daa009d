"""Build script.

The compiled extension is optional: if the C toolchain or Cython is missing
the package installs pure-Python only and the reference backend is used at
import time.  -ffp-contract=off keeps the compiled kernels bit-identical to
the reference backend (no FMA contraction).
"""

import sys

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "phasefork._backend._core",
                ["src/phasefork/_backend/_core.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
    sys.stderr.write("phasefork: building without compiled backend (%s)\n" % exc)

setup(ext_modules=ext_modules)
