# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled im2col / col2im kernels.

Must stay bitwise compatible with _kernels_np: same column layout and the
same ascending (ki, kj) accumulation order in col2im.
"""

import numpy as np

cimport numpy as cnp
from libc.string cimport memcpy

cnp.import_array()

ctypedef fused floating:
    float
    double


def im2col_fill(floating[:, :, :, ::1] xp, int k, floating[:, :, ::1] cols):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = hp - k + 1, ow = wp - k + 1
    cdef Py_ssize_t i, j, ki, kj, oy, row
    cdef floating *src
    cdef floating *dst
    for i in range(n):
        for j in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (j * k + ki) * k + kj
                    for oy in range(oh):
                        # one output row is a contiguous slice of the padded input
                        src = &xp[i, j, oy + ki, kj]
                        dst = &cols[i, row, oy * ow]
                        memcpy(dst, src, ow * sizeof(floating))


def col2im_fill(floating[:, :, ::1] cols, int k, floating[:, :, :, ::1] out):
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1], hp = out.shape[2], wp = out.shape[3]
    cdef Py_ssize_t oh = hp - k + 1, ow = wp - k + 1
    cdef Py_ssize_t i, j, ki, kj, oy, ox, row
    for i in range(n):
        for j in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (j * k + ki) * k + kj
                    for oy in range(oh):
                        for ox in range(ow):
                            out[i, j, oy + ki, ox + kj] += cols[i, row, oy * ow + ox]
