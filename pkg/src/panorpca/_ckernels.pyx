# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, fabs, INFINITY

cnp.import_array()

cdef double EDGE_EPS = 1e-6


cdef _f(a):
    return np.asfortranarray(a, dtype=np.float64)


def weighted_diff(vol_in, wx_in, wy_in, wz_in):
    cdef double[::1, :, :] vol = _f(vol_in)
    cdef double[::1, :, :] wx = _f(wx_in)
    cdef double[::1, :, :] wy = _f(wy_in)
    cdef double[::1, :, :] wz = _f(wz_in)
    cdef Py_ssize_t m = vol.shape[0], n = vol.shape[1], p = vol.shape[2]
    cdef Py_ssize_t i, j, k
    dx_arr = np.empty((m - 1, n, p), order="F")
    dy_arr = np.empty((m, n - 1, p), order="F")
    dz_arr = np.empty((m, n, p - 1), order="F")
    cdef double[::1, :, :] dx = dx_arr
    cdef double[::1, :, :] dy = dy_arr
    cdef double[::1, :, :] dz = dz_arr
    for k in range(p):
        for j in range(n):
            for i in range(m - 1):
                dx[i, j, k] = wx[i, j, k] * (vol[i + 1, j, k] - vol[i, j, k])
            if j + 1 < n:
                for i in range(m):
                    dy[i, j, k] = wy[i, j, k] * (vol[i, j + 1, k] - vol[i, j, k])
            if k + 1 < p:
                for i in range(m):
                    dz[i, j, k] = wz[i, j, k] * (vol[i, j, k + 1] - vol[i, j, k])
    return dx_arr, dy_arr, dz_arr


def weighted_diff_adjoint(dx_in, dy_in, dz_in, wx_in, wy_in, wz_in):
    cdef double[::1, :, :] dx = _f(dx_in)
    cdef double[::1, :, :] dy = _f(dy_in)
    cdef double[::1, :, :] dz = _f(dz_in)
    cdef double[::1, :, :] wx = _f(wx_in)
    cdef double[::1, :, :] wy = _f(wy_in)
    cdef double[::1, :, :] wz = _f(wz_in)
    cdef Py_ssize_t m = dx.shape[0] + 1, n = dy.shape[1] + 1, p = dz.shape[2] + 1
    cdef Py_ssize_t i, j, k
    cdef double g
    out_arr = np.zeros((m, n, p), order="F")
    cdef double[::1, :, :] out = out_arr
    for k in range(p):
        for j in range(n):
            for i in range(m - 1):
                g = wx[i, j, k] * dx[i, j, k]
                out[i, j, k] -= g
                out[i + 1, j, k] += g
            if j + 1 < n:
                for i in range(m):
                    g = wy[i, j, k] * dy[i, j, k]
                    out[i, j, k] -= g
                    out[i, j + 1, k] += g
            if k + 1 < p:
                for i in range(m):
                    g = wz[i, j, k] * dz[i, j, k]
                    out[i, j, k] -= g
                    out[i, j, k + 1] += g
    return out_arr


def normal_apply(vol_in, wx_in, wy_in, wz_in, double rho):
    cdef double[::1, :, :] vol = _f(vol_in)
    cdef double[::1, :, :] wx = _f(wx_in)
    cdef double[::1, :, :] wy = _f(wy_in)
    cdef double[::1, :, :] wz = _f(wz_in)
    cdef Py_ssize_t m = vol.shape[0], n = vol.shape[1], p = vol.shape[2]
    cdef Py_ssize_t i, j, k
    cdef double g
    out_arr = np.empty((m, n, p), order="F")
    cdef double[::1, :, :] out = out_arr
    for k in range(p):
        for j in range(n):
            for i in range(m):
                out[i, j, k] = vol[i, j, k]
    for k in range(p):
        for j in range(n):
            for i in range(m - 1):
                g = rho * wx[i, j, k] * (vol[i + 1, j, k] - vol[i, j, k])
                out[i, j, k] -= g
                out[i + 1, j, k] += g
            if j + 1 < n:
                for i in range(m):
                    g = rho * wy[i, j, k] * (vol[i, j + 1, k] - vol[i, j, k])
                    out[i, j, k] -= g
                    out[i, j + 1, k] += g
            if k + 1 < p:
                for i in range(m):
                    g = rho * wz[i, j, k] * (vol[i, j, k + 1] - vol[i, j, k])
                    out[i, j, k] -= g
                    out[i, j, k + 1] += g
    return out_arr


def warp_bilinear(double[:, :] src, double[:, :] T, Py_ssize_t height,
                  Py_ssize_t width, double ox, double oy):
    cdef Py_ssize_t a = src.shape[0], b = src.shape[1]
    cdef Py_ssize_t i, j, x0, y0, x1, y1
    cdef Py_ssize_t xmax = b - 2 if b >= 2 else 0
    cdef Py_ssize_t ymax = a - 2 if a >= 2 else 0
    cdef double x, y, hx, hy, hw, sx, sy, fx, fy
    out_arr = np.zeros((height, width))
    mask_arr = np.zeros((height, width), dtype=np.uint8)
    cdef double[:, :] out = out_arr
    cdef unsigned char[:, :] mask = mask_arr
    for i in range(height):
        y = i + oy
        for j in range(width):
            x = j + ox
            hx = T[0, 0] * x + T[0, 1] * y + T[0, 2]
            hy = T[1, 0] * x + T[1, 1] * y + T[1, 2]
            hw = T[2, 0] * x + T[2, 1] * y + T[2, 2]
            if fabs(hw) <= 1e-12:
                continue
            sx = hx / hw
            sy = hy / hw
            if sx < -EDGE_EPS or sx > b - 1 + EDGE_EPS:
                continue
            if sy < -EDGE_EPS or sy > a - 1 + EDGE_EPS:
                continue
            if sx < 0:
                sx = 0
            elif sx > b - 1:
                sx = b - 1
            if sy < 0:
                sy = 0
            elif sy > a - 1:
                sy = a - 1
            x0 = <Py_ssize_t>floor(sx)
            y0 = <Py_ssize_t>floor(sy)
            if x0 > xmax:
                x0 = xmax
            if y0 > ymax:
                y0 = ymax
            x1 = x0 + 1 if x0 + 1 < b else b - 1
            y1 = y0 + 1 if y0 + 1 < a else a - 1
            fx = sx - x0
            fy = sy - y0
            out[i, j] = ((1 - fy) * ((1 - fx) * src[y0, x0] + fx * src[y0, x1])
                         + fy * ((1 - fx) * src[y1, x0] + fx * src[y1, x1]))
            mask[i, j] = 1
    return out_arr, mask_arr


def ncc_scores(img_a, img_b, points, Py_ssize_t half, Py_ssize_t radius):
    cdef double[:, :] A = np.ascontiguousarray(img_a, dtype=np.float64)
    cdef double[:, :] B = np.ascontiguousarray(img_b, dtype=np.float64)
    cdef Py_ssize_t[:, :] pts = np.ascontiguousarray(points, dtype=np.intp)
    cdef Py_ssize_t npts = pts.shape[0], span = 2 * radius + 1
    cdef Py_ssize_t hb = B.shape[0], wb = B.shape[1]
    cdef Py_ssize_t size = 2 * half + 1
    cdef double area = size * size
    cdef Py_ssize_t idx, r, c, dr, dc, u, v, rb, cb
    cdef double mean_a, na, sa, sb, sbb, sab, nb, va
    out_arr = np.full((npts, span, span), -np.inf)
    cdef double[:, :, :] out = out_arr
    cdef double[:] pa = np.empty(size * size)
    for idx in range(npts):
        r = pts[idx, 0]
        c = pts[idx, 1]
        sa = 0
        for u in range(size):
            for v in range(size):
                sa += A[r - half + u, c - half + v]
        mean_a = sa / area
        na = 0
        for u in range(size):
            for v in range(size):
                va = A[r - half + u, c - half + v] - mean_a
                pa[u * size + v] = va
                na += va * va
        na = sqrt(na)
        if na < 1e-12:
            continue
        for dr in range(span):
            rb = r + dr - radius - half
            if rb < 0 or rb + size > hb:
                continue
            for dc in range(span):
                cb = c + dc - radius - half
                if cb < 0 or cb + size > wb:
                    continue
                sb = 0
                sbb = 0
                sab = 0
                for u in range(size):
                    for v in range(size):
                        va = B[rb + u, cb + v]
                        sb += va
                        sbb += va * va
                        sab += pa[u * size + v] * va
                # pa is zero-mean, so sum(pa * (b - mean_b)) == sum(pa * b)
                nb = sbb - sb * sb / area
                if nb <= 1e-24:
                    continue
                out[idx, dr, dc] = sab / (na * sqrt(nb))
    return out_arr
