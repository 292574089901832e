"""Voxel kernels with a compiled core and a pure-Python fallback.

The compiled extension (``_native``, Cython) is preferred when it imported
cleanly at build time; otherwise the numpy/Python implementations in
``_fallback`` are used.  Both expose the same three functions with identical
semantics:

- ``label_components(levels, mask, connectivity)``
- ``region_grow(values, seeds, reference, tau, box)``
- ``glcm_counts(quant, n_levels, offsets)``

``IMPLEMENTATION`` records which backend was selected; ``benchmarks/`` holds
a script comparing the two.
"""

import os

from . import _fallback

try:
    from . import _native  # compiled at install time; absent on plain checkouts
except ImportError:  # pragma: no cover - depends on build environment
    _native = None

# SONOPLAN_PURE_PYTHON=1 forces the fallback (benchmarking, debugging)
_force_python = os.environ.get("SONOPLAN_PURE_PYTHON", "") not in ("", "0")
_impl = _fallback if (_native is None or _force_python) else _native

IMPLEMENTATION = "python" if _impl is _fallback else "native"

label_components = _impl.label_components
region_grow = _impl.region_grow
glcm_counts = _impl.glcm_counts

__all__ = [
    "IMPLEMENTATION",
    "label_components",
    "region_grow",
    "glcm_counts",
]
