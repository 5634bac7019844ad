# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False, nonecheck=False
"""Compiled twins of the numpy kernel fallbacks (see numpy_backend.py).

Same signatures, same layouts, same tie-break and padding semantics; the
loops here avoid the large temporaries the vectorized versions allocate.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor
from libc.string cimport memcpy, memset

cnp.import_array()

ctypedef fused floating:
    float
    double


def im2col_nhwc(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad,
                out=None):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t out_h = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t out_w = (w + 2 * pad - kw) // stride + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    if out is None:
        out = np.empty((n * out_h * out_w, kh * kw * c), dtype=dtype)
    cdef floating[:, ::1] cols = out
    cdef Py_ssize_t b, oy, ox, i, j, row, col0, iy, ix
    with nogil:
        for b in range(n):
            for oy in range(out_h):
                for ox in range(out_w):
                    row = (b * out_h + oy) * out_w + ox
                    for i in range(kh):
                        iy = oy * stride + i - pad
                        for j in range(kw):
                            ix = ox * stride + j - pad
                            col0 = (i * kw + j) * c
                            if iy < 0 or iy >= h or ix < 0 or ix >= w:
                                memset(&cols[row, col0], 0, c * sizeof(floating))
                            else:
                                memcpy(&cols[row, col0], &x[b, iy, ix, 0],
                                       c * sizeof(floating))
    return out


def col2im_nhwc(floating[:, ::1] dcols, Py_ssize_t n, Py_ssize_t h, Py_ssize_t w,
                Py_ssize_t c, int kh, int kw, int stride, int pad, out=None):
    cdef Py_ssize_t out_h = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t out_w = (w + 2 * pad - kw) // stride + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    cdef bint fresh = out is None
    if fresh:
        out = np.zeros((n, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, oy, ox, i, j, ch, row, col0, iy, ix
    if not fresh and n * h * w * c > 0:
        # scatter below only touches in-bounds taps; a reused buffer
        # must start from zero
        memset(&dx[0, 0, 0, 0], 0, n * h * w * c * sizeof(floating))
    with nogil:
        for b in range(n):
            for oy in range(out_h):
                for ox in range(out_w):
                    row = (b * out_h + oy) * out_w + ox
                    for i in range(kh):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(kw):
                            ix = ox * stride + j - pad
                            if ix < 0 or ix >= w:
                                continue
                            col0 = (i * kw + j) * c
                            for ch in range(c):
                                dx[b, iy, ix, ch] += dcols[row, col0 + ch]
    return out


def relu_backward(floating[::1] x, floating[::1] g):
    cdef Py_ssize_t i, size = x.shape[0]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.empty(size, dtype=dtype)
    cdef floating[::1] o = out
    with nogil:
        for i in range(size):
            o[i] = g[i] if x[i] > 0 else 0
    return out


def avgpool2x2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = w // 2
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, oy, ox, y, xx
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(oh):
                    y = oy * 2
                    for ox in range(ow):
                        xx = ox * 2
                        out[b, ch, oy, ox] = <floating>0.25 * (
                            x[b, ch, y, xx] + x[b, ch, y, xx + 1]
                            + x[b, ch, y + 1, xx] + x[b, ch, y + 1, xx + 1])
    return out_arr


def avgpool2x2_backward(floating[:, :, :, ::1] g):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.empty((n, c, oh * 2, ow * 2), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, ch, y, xx
    cdef floating v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh * 2):
                    for xx in range(ow):
                        v = <floating>0.25 * g[b, ch, y >> 1, xx]
                        dx[b, ch, y, xx * 2] = v
                        dx[b, ch, y, xx * 2 + 1] = v
    return out


def maxpool2x2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = w // 2
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    arg_arr = np.empty((n, c, oh, ow), dtype=np.uint8)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, oy, ox, y, xx
    cdef floating best, v
    cdef unsigned char k, bestk
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        y = oy * 2
                        xx = ox * 2
                        best = x[b, ch, y, xx]
                        bestk = 0
                        v = x[b, ch, y, xx + 1]
                        if v > best:
                            best = v
                            bestk = 1
                        v = x[b, ch, y + 1, xx]
                        if v > best:
                            best = v
                            bestk = 2
                        v = x[b, ch, y + 1, xx + 1]
                        if v > best:
                            best = v
                            bestk = 3
                        out[b, ch, oy, ox] = best
                        arg[b, ch, oy, ox] = bestk
    return out_arr, arg_arr


def maxpool2x2_backward(floating[:, :, :, ::1] g, unsigned char[:, :, :, ::1] arg,
                        Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, ch, oy, ox
    cdef unsigned char k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        k = arg[b, ch, oy, ox]
                        dx[b, ch, oy * 2 + (k >> 1), ox * 2 + (k & 1)] += g[b, ch, oy, ox]
    return out


def bilinear_forward(floating[:, :, :, ::1] img, floating[:, :, :, ::1] grid):
    cdef Py_ssize_t n = img.shape[0], c = img.shape[1], h = img.shape[2], w = img.shape[3]
    cdef Py_ssize_t oh = grid.shape[1], ow = grid.shape[2]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((n, c, oh, ow), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, oy, ox, x0, y0, x1, y1
    cdef double cx, cy, fx, fy, w00, w01, w10, w11
    cdef floating acc
    with nogil:
        for b in range(n):
            for oy in range(oh):
                for ox in range(ow):
                    cx = (grid[b, oy, ox, 0] + 1.0) * ((w - 1) / 2.0)
                    cy = (grid[b, oy, ox, 1] + 1.0) * ((h - 1) / 2.0)
                    x0 = <Py_ssize_t>floor(cx)
                    y0 = <Py_ssize_t>floor(cy)
                    fx = cx - x0
                    fy = cy - y0
                    x1 = x0 + 1
                    y1 = y0 + 1
                    w00 = (1.0 - fx) * (1.0 - fy)
                    w10 = fx * (1.0 - fy)
                    w01 = (1.0 - fx) * fy
                    w11 = fx * fy
                    if x0 < 0 or x0 >= w:
                        w00 = 0.0
                        w01 = 0.0
                    if x1 < 0 or x1 >= w:
                        w10 = 0.0
                        w11 = 0.0
                    if y0 < 0 or y0 >= h:
                        w00 = 0.0
                        w10 = 0.0
                    if y1 < 0 or y1 >= h:
                        w01 = 0.0
                        w11 = 0.0
                    for ch in range(c):
                        acc = 0
                        if w00 != 0.0:
                            acc = acc + <floating>w00 * img[b, ch, y0, x0]
                        if w10 != 0.0:
                            acc = acc + <floating>w10 * img[b, ch, y0, x1]
                        if w01 != 0.0:
                            acc = acc + <floating>w01 * img[b, ch, y1, x0]
                        if w11 != 0.0:
                            acc = acc + <floating>w11 * img[b, ch, y1, x1]
                        out[b, ch, oy, ox] = acc
    return out_arr


def bilinear_backward(floating[:, :, :, ::1] img, floating[:, :, :, ::1] grid,
                      floating[:, :, :, ::1] gout):
    cdef Py_ssize_t n = img.shape[0], c = img.shape[1], h = img.shape[2], w = img.shape[3]
    cdef Py_ssize_t oh = grid.shape[1], ow = grid.shape[2]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dimg_arr = np.zeros((n, c, h, w), dtype=dtype)
    dgrid_arr = np.zeros((n, oh, ow, 2), dtype=dtype)
    cdef floating[:, :, :, ::1] dimg = dimg_arr
    cdef floating[:, :, :, ::1] dgrid = dgrid_arr
    cdef Py_ssize_t b, ch, oy, ox, x0, y0, x1, y1
    cdef bint v00, v10, v01, v11
    cdef double cx, cy, fx, fy, g, dcx, dcy
    cdef double i00, i10, i01, i11
    with nogil:
        for b in range(n):
            for oy in range(oh):
                for ox in range(ow):
                    cx = (grid[b, oy, ox, 0] + 1.0) * ((w - 1) / 2.0)
                    cy = (grid[b, oy, ox, 1] + 1.0) * ((h - 1) / 2.0)
                    x0 = <Py_ssize_t>floor(cx)
                    y0 = <Py_ssize_t>floor(cy)
                    fx = cx - x0
                    fy = cy - y0
                    x1 = x0 + 1
                    y1 = y0 + 1
                    v00 = 0 <= x0 < w and 0 <= y0 < h
                    v10 = 0 <= x1 < w and 0 <= y0 < h
                    v01 = 0 <= x0 < w and 0 <= y1 < h
                    v11 = 0 <= x1 < w and 0 <= y1 < h
                    dcx = 0.0
                    dcy = 0.0
                    for ch in range(c):
                        g = gout[b, ch, oy, ox]
                        i00 = img[b, ch, y0, x0] if v00 else 0.0
                        i10 = img[b, ch, y0, x1] if v10 else 0.0
                        i01 = img[b, ch, y1, x0] if v01 else 0.0
                        i11 = img[b, ch, y1, x1] if v11 else 0.0
                        if v00:
                            dimg[b, ch, y0, x0] += <floating>(g * (1.0 - fx) * (1.0 - fy))
                        if v10:
                            dimg[b, ch, y0, x1] += <floating>(g * fx * (1.0 - fy))
                        if v01:
                            dimg[b, ch, y1, x0] += <floating>(g * (1.0 - fx) * fy)
                        if v11:
                            dimg[b, ch, y1, x1] += <floating>(g * fx * fy)
                        dcx += g * ((1.0 - fy) * (i10 - i00) + fy * (i11 - i01))
                        dcy += g * ((1.0 - fx) * (i01 - i00) + fx * (i11 - i10))
                    dgrid[b, oy, ox, 0] = <floating>(dcx * ((w - 1) / 2.0))
                    dgrid[b, oy, ox, 1] = <floating>(dcy * ((h - 1) / 2.0))
    return dimg_arr, dgrid_arr
