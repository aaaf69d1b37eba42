# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Must stay arithmetic-identical to ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

from pager._kernels._pykernels import gaussian_taps

cnp.import_array()

cdef enum:
    RADIUS = 3
cdef double TAN_22_5 = 0.41421356237309503
cdef double TAN_67_5 = 2.414213562373095
cdef double NMS_EPS = 1e-12


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


cdef inline double _at(double[:, :] m, Py_ssize_t y, Py_ssize_t x, Py_ssize_t h, Py_ssize_t w) nogil:
    if y < 0 or y >= h or x < 0 or x >= w:
        return 0.0
    return m[y, x]


def canny_edges(luma, double low, double high, double sigma=1.0):
    cdef double[:, :, :] src = np.ascontiguousarray(luma, dtype=np.float64)
    cdef Py_ssize_t n = src.shape[0], h = src.shape[1], w = src.shape[2]
    cdef double[:] taps = gaussian_taps(sigma)
    cdef Py_ssize_t i, y, x, j, k, yy, xx, top
    cdef double acc, gxv, gyv, ax, ay, m, mp, mn

    cdef double[:, :] tmp = np.empty((h, w))
    cdef double[:, :] b = np.empty((h, w))
    cdef double[:, :] gx = np.empty((h, w))
    cdef double[:, :] gy = np.empty((h, w))
    cdef double[:, :] mag = np.empty((h, w))
    cdef unsigned char[:, :] state = np.empty((h, w), dtype=np.uint8)
    out_arr = np.zeros((n, h, w), dtype=np.uint8)
    cdef unsigned char[:, :, :] out = out_arr
    cdef Py_ssize_t[:] stack = np.empty(h * w, dtype=np.intp)

    with nogil:
        for i in range(n):
            for y in range(h):
                for x in range(w):
                    acc = 0.0
                    for j in range(2 * RADIUS + 1):
                        acc = acc + taps[j] * src[i, y, _clamp(x + j - RADIUS, w)]
                    tmp[y, x] = acc
            for y in range(h):
                for x in range(w):
                    acc = 0.0
                    for j in range(2 * RADIUS + 1):
                        acc = acc + taps[j] * tmp[_clamp(y + j - RADIUS, h), x]
                    b[y, x] = acc
            for y in range(h):
                for x in range(w):
                    gxv = ((b[_clamp(y - 1, h), _clamp(x + 1, w)] - b[_clamp(y - 1, h), _clamp(x - 1, w)])
                           + 2.0 * (b[y, _clamp(x + 1, w)] - b[y, _clamp(x - 1, w)])
                           + (b[_clamp(y + 1, h), _clamp(x + 1, w)] - b[_clamp(y + 1, h), _clamp(x - 1, w)])) * 0.25
                    gyv = ((b[_clamp(y + 1, h), _clamp(x - 1, w)] - b[_clamp(y - 1, h), _clamp(x - 1, w)])
                           + 2.0 * (b[_clamp(y + 1, h), x] - b[_clamp(y - 1, h), x])
                           + (b[_clamp(y + 1, h), _clamp(x + 1, w)] - b[_clamp(y - 1, h), _clamp(x + 1, w)])) * 0.25
                    gx[y, x] = gxv
                    gy[y, x] = gyv
                    mag[y, x] = sqrt(gxv * gxv + gyv * gyv)
            # state: 0 none, 1 weak, 2 strong (queued)
            for y in range(h):
                for x in range(w):
                    state[y, x] = 0
                    m = mag[y, x]
                    if m <= 0.0 or m < low:
                        continue
                    ax = fabs(gx[y, x])
                    ay = fabs(gy[y, x])
                    if ay <= TAN_22_5 * ax:
                        mp = _at(mag, y, x - 1, h, w)
                        mn = _at(mag, y, x + 1, h, w)
                    elif ay > TAN_67_5 * ax:
                        mp = _at(mag, y - 1, x, h, w)
                        mn = _at(mag, y + 1, x, h, w)
                    elif gx[y, x] * gy[y, x] > 0:
                        mp = _at(mag, y - 1, x - 1, h, w)
                        mn = _at(mag, y + 1, x + 1, h, w)
                    else:
                        mp = _at(mag, y - 1, x + 1, h, w)
                        mn = _at(mag, y + 1, x - 1, h, w)
                    if m >= mp - NMS_EPS and m > mn + NMS_EPS:
                        state[y, x] = 2 if m >= high else 1
            top = 0
            for y in range(h):
                for x in range(w):
                    if state[y, x] == 2:
                        out[i, y, x] = 1
                        stack[top] = y * w + x
                        top += 1
            while top > 0:
                top -= 1
                k = stack[top]
                y = k // w
                x = k - y * w
                for yy in range(y - 1, y + 2):
                    if yy < 0 or yy >= h:
                        continue
                    for xx in range(x - 1, x + 2):
                        if xx < 0 or xx >= w:
                            continue
                        if state[yy, xx] == 1:
                            state[yy, xx] = 2
                            out[i, yy, xx] = 1
                            stack[top] = yy * w + xx
                            top += 1
    return out_arr


def diag_gauss_scores(x, means, inv_var, log_const):
    cdef double[:, :] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :] M = np.ascontiguousarray(means, dtype=np.float64)
    cdef double[:, :] IV = np.ascontiguousarray(inv_var, dtype=np.float64)
    cdef double[:] C = np.ascontiguousarray(log_const, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], kk = M.shape[0], dim = X.shape[1]
    out_arr = np.empty((n, kk), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t i, k, d
    cdef double acc, diff
    with nogil:
        for i in range(n):
            for k in range(kk):
                acc = 0.0
                for d in range(dim):
                    diff = X[i, d] - M[k, d]
                    acc = acc + diff * diff * IV[k, d]
                out[i, k] = C[k] - 0.5 * acc
    return out_arr
