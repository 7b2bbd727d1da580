"""Kernel backend selection.

The compiled Cython kernels are used when they were built; otherwise the
NumPy versions take over. Set ``BIDIFLOW_KERNELS=python`` to force the
fallback, or ``BIDIFLOW_KERNELS=compiled`` to fail loudly if the extension
is missing.
"""

import os

from bidiflow import _pykernels

try:
    from bidiflow import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels


def get_kernels(name="auto"):
    if name == "auto":
        return BACKENDS.get("compiled", _pykernels)
    if name not in BACKENDS:
        raise ImportError(f"kernel backend {name!r} is not available (have: {sorted(BACKENDS)})")
    return BACKENDS[name]


kernels = get_kernels(os.environ.get("BIDIFLOW_KERNELS", "auto"))
BACKEND_NAME = "compiled" if kernels is _ckernels else "python"
