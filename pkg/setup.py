"""Build script for the optional compiled raycast kernel.

The package works without the extension: mvdp.raycast falls back to the
vectorized numpy kernel when ``mvdp._raycast`` is missing (see that module
for the selection logic and the MVDP_NO_EXT override).
"""

import sys

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    # -ffp-contract=off keeps the compiled kernel bit-identical to the
    # numpy fallback (no fused multiply-add reassociation).
    extensions = cythonize(
        [
            Extension(
                "mvdp._raycast",
                ["src/mvdp/_raycast.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level="3",
    )
except ImportError as exc:  # pragma: no cover - build environment dependent
    print(f"mvdp: building without the compiled raycast kernel ({exc})", file=sys.stderr)
    extensions = []

setup(ext_modules=extensions)
