"""Pure-numpy kernels for the convolution hot path.

Layouts are shared with the compiled backend:
  im2col: (N, C, Hp, Wp) padded input -> (N, C*k*k, OH*OW) column matrix
  col2im: the scatter-add inverse, accumulating per target element in
          ascending (ki, kj) offset order

The accumulation order matters: the compiled kernels follow the same order so
both backends produce bitwise identical results.
"""

from __future__ import annotations

import numpy as np


def im2col(xp: np.ndarray, k: int) -> np.ndarray:
    n, c, hp, wp = xp.shape
    oh, ow = hp - k + 1, wp - k + 1
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, k, k, oh, ow), strides=(s0, s1, s2, s3, s2, s3)
    )
    # non-contiguous view: reshape performs the gather copy
    return win.reshape(n, c * k * k, oh * ow)


def col2im(cols: np.ndarray, n: int, c: int, hp: int, wp: int, k: int) -> np.ndarray:
    oh, ow = hp - k + 1, wp - k + 1
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    c6 = cols.reshape(n, c, k, k, oh, ow)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + oh, kj : kj + ow] += c6[:, :, ki, kj]
    return out
