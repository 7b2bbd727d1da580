# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``.

Loops are serial on purpose: the accumulation order is fixed, so results are
bit-reproducible run to run.
"""

import numpy as np

from libc.math cimport floor, pow, sqrt


cdef inline void _axis(double p, Py_ssize_t n, Py_ssize_t* i0, Py_ssize_t* i1,
                       double* f, double* alive) noexcept nogil:
    cdef double c = p
    alive[0] = 1.0
    if p < 0.0:
        c = 0.0
        alive[0] = 0.0
    elif p > n - 1:
        c = n - 1
        alive[0] = 0.0
    cdef Py_ssize_t lo = <Py_ssize_t>floor(c)
    cdef Py_ssize_t top = n - 2 if n >= 2 else 0
    if lo > top:
        lo = top
    i0[0] = lo
    i1[0] = lo + 1 if lo + 1 <= n - 1 else n - 1
    f[0] = c - lo


def warp(const double[:, :, ::1] src, const double[:, ::1] u, const double[:, ::1] v):
    cdef Py_ssize_t channels = src.shape[0], height = src.shape[1], width = src.shape[2]
    out_a = np.empty((channels, height, width))
    gx_a = np.empty((channels, height, width))
    gy_a = np.empty((channels, height, width))
    valid_a = np.empty((height, width))
    cdef double[:, :, ::1] out = out_a
    cdef double[:, :, ::1] gx = gx_a
    cdef double[:, :, ::1] gy = gy_a
    cdef double[:, ::1] valid = valid_a
    cdef Py_ssize_t y, x, ch, x0, x1, y0, y1
    cdef double px, py, fx, fy, ax, ay, a, b, c, d
    with nogil:
        for y in range(height):
            for x in range(width):
                px = x + u[y, x]
                py = y + v[y, x]
                _axis(px, width, &x0, &x1, &fx, &ax)
                _axis(py, height, &y0, &y1, &fy, &ay)
                # the image covers the pixel areas [-0.5, W - 0.5] x [-0.5, H - 0.5]
                if -0.5 <= px <= width - 0.5 and -0.5 <= py <= height - 0.5:
                    valid[y, x] = 1.0
                else:
                    valid[y, x] = 0.0
                for ch in range(channels):
                    a = src[ch, y0, x0]
                    b = src[ch, y0, x1]
                    c = src[ch, y1, x0]
                    d = src[ch, y1, x1]
                    out[ch, y, x] = ((1.0 - fx) * (1.0 - fy) * a + fx * (1.0 - fy) * b
                                     + (1.0 - fx) * fy * c + fx * fy * d)
                    gx[ch, y, x] = ax * ((1.0 - fy) * (b - a) + fy * (d - c))
                    gy[ch, y, x] = ay * ((1.0 - fx) * (c - a) + fx * (d - b))
    return out_a, gx_a, gy_a, valid_a


def splat(const double[:, :, ::1] grad, const double[:, ::1] u, const double[:, ::1] v):
    cdef Py_ssize_t channels = grad.shape[0], height = grad.shape[1], width = grad.shape[2]
    out_a = np.zeros((channels, height, width))
    cdef double[:, :, ::1] out = out_a
    cdef Py_ssize_t y, x, ch, x0, x1, y0, y1
    cdef double fx, fy, ax, ay, g
    with nogil:
        for y in range(height):
            for x in range(width):
                _axis(x + u[y, x], width, &x0, &x1, &fx, &ax)
                _axis(y + v[y, x], height, &y0, &y1, &fy, &ay)
                for ch in range(channels):
                    g = grad[ch, y, x]
                    out[ch, y0, x0] += (1.0 - fx) * (1.0 - fy) * g
                    out[ch, y0, x1] += fx * (1.0 - fy) * g
                    out[ch, y1, x0] += (1.0 - fx) * fy * g
                    out[ch, y1, x1] += fx * fy * g
    return out_a


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    if i < 0:
        return 0
    if i > n - 1:
        return n - 1
    return i


def census_features(const double[:, ::1] lum, int radius, double softness):
    cdef Py_ssize_t height = lum.shape[0], width = lum.shape[1]
    cdef int side = 2 * radius + 1
    cdef Py_ssize_t n_slots = side * side - 1
    feats_a = np.empty((n_slots, height, width))
    cdef double[:, :, ::1] feats = feats_a
    cdef Py_ssize_t y, x, k
    cdef int dy, dx
    cdef double d
    with nogil:
        # offset loop outermost so each feature plane is written contiguously
        k = 0
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                if dy == 0 and dx == 0:
                    continue
                for y in range(height):
                    for x in range(width):
                        d = lum[_clamp(y + dy, height), _clamp(x + dx, width)] - lum[y, x]
                        feats[k, y, x] = d / sqrt(softness + d * d)
                k += 1
    return feats_a


def census_cost(const double[:, ::1] warped, const double[:, :, ::1] ref,
                const double[:, ::1] mask, int radius, double softness,
                double saturation, double gamma, double eps):
    cdef Py_ssize_t height = warped.shape[0], width = warped.shape[1]
    dist_a = np.zeros((height, width))
    grad_a = np.zeros((height, width))
    cdef double[:, ::1] dist = dist_a
    cdef double[:, ::1] grad = grad_a
    cdef Py_ssize_t y, x, k, ny, nx
    cdef int dy, dx
    cdef double center, d, q, e, e2, s2, acc, g_dist, g, base
    cdef double total = 0.0
    with nogil:
        for y in range(height):
            for x in range(width):
                center = warped[y, x]
                acc = 0.0
                k = 0
                for dy in range(-radius, radius + 1):
                    for dx in range(-radius, radius + 1):
                        if dy == 0 and dx == 0:
                            continue
                        d = warped[_clamp(y + dy, height), _clamp(x + dx, width)] - center
                        e = ref[k, y, x] - d / sqrt(softness + d * d)
                        e2 = e * e
                        acc = acc + e2 / (saturation + e2)
                        k += 1
                dist[y, x] = acc
                if mask[y, x] == 0.0:
                    continue
                base = acc * acc + eps * eps
                total += mask[y, x] * pow(base, gamma)
                g_dist = mask[y, x] * (2.0 * gamma * acc * pow(base, gamma - 1.0))
                if g_dist == 0.0:
                    continue
                k = 0
                for dy in range(-radius, radius + 1):
                    for dx in range(-radius, radius + 1):
                        if dy == 0 and dx == 0:
                            continue
                        ny = _clamp(y + dy, height)
                        nx = _clamp(x + dx, width)
                        d = warped[ny, nx] - center
                        q = softness + d * d
                        e = ref[k, y, x] - d / sqrt(q)
                        s2 = saturation + e * e
                        g = -g_dist * (2.0 * e * saturation / (s2 * s2)) * (softness / (q * sqrt(q)))
                        grad[ny, nx] += g
                        grad[y, x] -= g
                        k += 1
    return total, dist_a, grad_a
