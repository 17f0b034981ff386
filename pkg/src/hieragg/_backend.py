"""Kernel backend selection.

The compiled extension is used when it was built, unless the environment
variable ``HIERAGG_PURE_PYTHON`` is set to a non-empty value.
"""

import os

from hieragg import _kernels_py

if os.environ.get("HIERAGG_PURE_PYTHON"):
    kernels = _kernels_py
else:
    try:
        from hieragg import _kernels as kernels
    except ImportError:
        kernels = _kernels_py

BACKEND = "python" if kernels is _kernels_py else "cython"
