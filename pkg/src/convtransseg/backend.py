"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy implementation
is the fallback. Set CTS_KERNELS=numpy or CTS_KERNELS=cython to force one
(the latter raises if the extension is missing). Both backends are bitwise
equivalent, so the choice affects speed only.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_np

_choice = os.environ.get("CTS_KERNELS", "auto").lower()

_cy = None
if _choice in ("auto", "cython"):
    try:
        from . import _kernels_cy as _cy  # type: ignore[no-redef]
    except ImportError:
        if _choice == "cython":
            raise
        _cy = None

KERNEL_BACKEND = "cython" if _cy is not None else "numpy"


def im2col_numpy(xp: np.ndarray, k: int) -> np.ndarray:
    return _kernels_np.im2col(xp, k)


def col2im_numpy(cols: np.ndarray, n: int, c: int, hp: int, wp: int, k: int) -> np.ndarray:
    return _kernels_np.col2im(cols, n, c, hp, wp, k)


def im2col_cython(xp: np.ndarray, k: int) -> np.ndarray:
    n, c, hp, wp = xp.shape
    cols = np.empty((n, c * k * k, (hp - k + 1) * (wp - k + 1)), dtype=xp.dtype)
    _cy.im2col_fill(np.ascontiguousarray(xp), k, cols)
    return cols


def col2im_cython(cols: np.ndarray, n: int, c: int, hp: int, wp: int, k: int) -> np.ndarray:
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    _cy.col2im_fill(np.ascontiguousarray(cols), k, out)
    return out


if KERNEL_BACKEND == "cython":
    im2col = im2col_cython
    col2im = col2im_cython
else:
    im2col = im2col_numpy
    col2im = col2im_numpy
