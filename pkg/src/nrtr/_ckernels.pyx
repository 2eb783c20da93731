# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im kernels for the convolutional front-end.

Same contract as ``nrtr._kernels_py``; selected at import by ``nrtr.kernels``.
"""

import numpy as np
from libc.string cimport memcpy

ctypedef fused real:
    float
    double


cdef void _im2col(const real[:, :, :, ::1] xp, real[:, :, :, :, :, ::1] out,
                  Py_ssize_t stride) noexcept nogil:
    # each (patch, kernel row) is one contiguous run of kw * c input values
    cdef Py_ssize_t b, y, x, i
    cdef Py_ssize_t nb = out.shape[0], ho = out.shape[1], wo = out.shape[2]
    cdef Py_ssize_t kh = out.shape[3], run = out.shape[4] * out.shape[5]
    for b in range(nb):
        for y in range(ho):
            for x in range(wo):
                for i in range(kh):
                    memcpy(&out[b, y, x, i, 0, 0], &xp[b, y * stride + i, x * stride, 0], run * sizeof(real))


cdef void _col2im(const real[:, :, :, :, :, ::1] cols, real[:, :, :, ::1] out,
                  Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t b, y, x, i, t
    cdef Py_ssize_t nb = cols.shape[0], ho = cols.shape[1], wo = cols.shape[2]
    cdef Py_ssize_t kh = cols.shape[3], run = cols.shape[4] * cols.shape[5]
    cdef real *dst
    cdef const real *src
    for b in range(nb):
        for y in range(ho):
            for x in range(wo):
                for i in range(kh):
                    dst = &out[b, y * stride + i, x * stride, 0]
                    src = &cols[b, y, x, i, 0, 0]
                    for t in range(run):
                        dst[t] += src[t]


def im2col(xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t ho, Py_ssize_t wo):
    xp = np.ascontiguousarray(xp)
    out = np.empty((xp.shape[0], ho, wo, kh, kw, xp.shape[3]), dtype=xp.dtype)
    if xp.dtype == np.float32:
        _im2col[float](xp, out, stride)
    elif xp.dtype == np.float64:
        _im2col[double](xp, out, stride)
    else:
        raise TypeError(f"unsupported dtype {xp.dtype}")
    return out


def col2im(cols, Py_ssize_t hp, Py_ssize_t wp, Py_ssize_t stride):
    cols = np.ascontiguousarray(cols)
    out = np.zeros((cols.shape[0], hp, wp, cols.shape[5]), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, out, stride)
    elif cols.dtype == np.float64:
        _col2im[double](cols, out, stride)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return out
