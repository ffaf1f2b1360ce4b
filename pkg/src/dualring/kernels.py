"""Kernel backend selection.

The compiled extension is used when it imports; otherwise (or when
``DUALRING_PURE=1``) the numpy implementation is used.  Both expose
``vecmat(share, flat, block, exp, log)`` with identical semantics.
"""
import os

import numpy as np

from . import _gfkernel_py

BACKENDS = {"numpy": _gfkernel_py.vecmat}

try:
    from . import _gfkernel
except ImportError:  # extension not built
    _gfkernel = None
else:
    BACKENDS["cython"] = _gfkernel.vecmat

if os.environ.get("DUALRING_PURE") == "1" or "cython" not in BACKENDS:
    BACKEND = "numpy"
else:
    BACKEND = "cython"


def vecmat(share, flat, block, gf, backend=None):
    """Fold ``flat`` (row-major blocks of ``block`` words) by ``share`` in ``gf``."""
    fn = BACKENDS[backend or BACKEND]
    share = np.ascontiguousarray(share, dtype=np.uint32)
    flat = np.ascontiguousarray(flat)
    if flat.dtype not in (np.uint8, np.uint16, np.uint32):
        flat = flat.astype(gf.dtype)
    out = fn(share, flat, int(block), gf.exp, gf.log)
    return out.astype(gf.dtype)
