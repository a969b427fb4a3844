# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner kernels. Same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

ctypedef fused real:
    float
    double


def warp_bilinear(const real[:, :, :, ::1] images, const double[:, ::1] src_rows,
                  const double[:, ::1] src_cols):
    cdef Py_ssize_t n = images.shape[0], h = images.shape[1], w = images.shape[2], c = images.shape[3]
    out_np = np.empty((n, h, w, c), dtype=np.asarray(images).dtype)
    cdef real[:, :, :, ::1] out = out_np
    # per-output-pixel taps, shared by the whole batch
    r0_np = np.empty((h, w), dtype=np.intp)
    c0_np = np.empty((h, w), dtype=np.intp)
    fy_np = np.empty((h, w), dtype=np.float64)
    fx_np = np.empty((h, w), dtype=np.float64)
    ok_np = np.empty((h, w, 4), dtype=np.uint8)
    cdef Py_ssize_t[:, ::1] r0v = r0_np
    cdef Py_ssize_t[:, ::1] c0v = c0_np
    cdef double[:, ::1] fyv = fy_np
    cdef double[:, ::1] fxv = fx_np
    cdef unsigned char[:, :, ::1] ok = ok_np
    cdef Py_ssize_t k, i, j, ch, r0, c0
    cdef double fy, fx, v00, v01, v10, v11, top, bot
    with nogil:
        for i in range(h):
            for j in range(w):
                r0 = <Py_ssize_t>floor(src_rows[i, j])
                c0 = <Py_ssize_t>floor(src_cols[i, j])
                r0v[i, j] = r0
                c0v[i, j] = c0
                fyv[i, j] = src_rows[i, j] - r0
                fxv[i, j] = src_cols[i, j] - c0
                ok[i, j, 0] = r0 >= 0 and r0 < h and c0 >= 0 and c0 < w
                ok[i, j, 1] = r0 >= 0 and r0 < h and c0 + 1 >= 0 and c0 + 1 < w
                ok[i, j, 2] = r0 + 1 >= 0 and r0 + 1 < h and c0 >= 0 and c0 < w
                ok[i, j, 3] = r0 + 1 >= 0 and r0 + 1 < h and c0 + 1 >= 0 and c0 + 1 < w
        for k in range(n):
            for i in range(h):
                for j in range(w):
                    r0 = r0v[i, j]
                    c0 = c0v[i, j]
                    fy = fyv[i, j]
                    fx = fxv[i, j]
                    for ch in range(c):
                        v00 = images[k, r0, c0, ch] if ok[i, j, 0] else 0.0
                        v01 = images[k, r0, c0 + 1, ch] if ok[i, j, 1] else 0.0
                        v10 = images[k, r0 + 1, c0, ch] if ok[i, j, 2] else 0.0
                        v11 = images[k, r0 + 1, c0 + 1, ch] if ok[i, j, 3] else 0.0
                        top = v00 * (1.0 - fx) + v01 * fx
                        bot = v10 * (1.0 - fx) + v11 * fx
                        out[k, i, j, ch] = <real>(top * (1.0 - fy) + bot * fy)
    return out_np


def rasterize(const double[:, :, ::1] xy, Py_ssize_t size):
    cdef Py_ssize_t n = xy.shape[0], npts = xy.shape[1]
    counts_np = np.zeros((n, size, size), dtype=np.int64)
    cdef long long[:, :, ::1] counts = counts_np
    out_np = np.empty((n, size, size), dtype=np.float32)
    cdef float[:, :, ::1] out = out_np
    cdef Py_ssize_t k, p, r, cc, i, j
    cdef long long peak
    cdef double scale
    with nogil:
        for k in range(n):
            peak = 0
            for p in range(npts):
                cc = <Py_ssize_t>floor((xy[k, p, 0] + 1.0) * 0.5 * size)
                r = <Py_ssize_t>floor((1.0 - xy[k, p, 1]) * 0.5 * size)
                if cc < 0:
                    cc = 0
                elif cc > size - 1:
                    cc = size - 1
                if r < 0:
                    r = 0
                elif r > size - 1:
                    r = size - 1
                counts[k, r, cc] += 1
                if counts[k, r, cc] > peak:
                    peak = counts[k, r, cc]
            if peak == 0:
                peak = 1
            scale = <double>peak
            for i in range(size):
                for j in range(size):
                    out[k, i, j] = <float>(counts[k, i, j] / scale)
    return out_np


def im2col(const real[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - kh) // stride + 1, wo = (w - kw) // stride + 1
    out_np = np.empty((b, ho * wo, c * kh * kw), dtype=np.asarray(x).dtype)
    cdef real[:, :, ::1] out = out_np
    cdef Py_ssize_t n, oi, oj, ch, i, j, row, col
    with nogil:
        for n in range(b):
            for oi in range(ho):
                for oj in range(wo):
                    row = oi * wo + oj
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                out[n, row, col] = x[n, ch, oi * stride + i, oj * stride + j]
                                col += 1
    return out_np


def col2im(const real[:, :, ::1] cols, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w,
           Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t b = cols.shape[0]
    cdef Py_ssize_t ho = (h - kh) // stride + 1, wo = (w - kw) // stride + 1
    out_np = np.zeros((b, c, h, w), dtype=np.asarray(cols).dtype)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t n, oi, oj, ch, i, j, row, col
    with nogil:
        for n in range(b):
            for oi in range(ho):
                for oj in range(wo):
                    row = oi * wo + oj
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                out[n, ch, oi * stride + i, oj * stride + j] += cols[n, row, col]
                                col += 1
    return out_np
