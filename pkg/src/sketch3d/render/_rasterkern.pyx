# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled rasterizer kernels.

Hot inner loop of the whole pipeline: per-(pixel, face) signed squared
distances, sigmoid influences and their vertex gradients. Semantics match
sketch3d.render._numpy_backend bit-for-bit (same formulas, same pair order).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, fabs, floor, log1p, sqrt

cnp.import_array()

DEF MARGIN_SIGMAS = 5.0
DEF D_CLAMP = 1.0 - 1e-12
# sigmoid(x) rounds to exactly 1.0 in float64 beyond this argument
DEF SATURATION_ARG = 40.0

cdef double LOG_MISS_CLAMPED = log1p(-D_CLAMP)


cdef inline double _sigmoid(double x) nogil:
    cdef double e = exp(-fabs(x))
    if x >= 0:
        return 1.0 / (1.0 + e)
    return e / (1.0 + e)


cdef inline long _clip(long v, long lo, long hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef void _face_bbox(double[:, ::1] verts, long[:, ::1] faces, Py_ssize_t f,
                     double margin, long h, long w,
                     long* c0, long* c1, long* r0, long* r1) nogil:
    cdef double xmin = 1e30, xmax = -1e30, ymin = 1e30, ymax = -1e30
    cdef double x, y
    cdef int k
    for k in range(3):
        x = verts[faces[f, k], 0]
        y = verts[faces[f, k], 1]
        if x < xmin: xmin = x
        if x > xmax: xmax = x
        if y < ymin: ymin = y
        if y > ymax: ymax = y
    xmin -= margin; xmax += margin; ymin -= margin; ymax += margin
    c0[0] = _clip(<long>ceil((xmin + 1) * w / 2 - 0.5), 0, w - 1)
    c1[0] = _clip(<long>floor((xmax + 1) * w / 2 - 0.5), -1, w - 1)
    r0[0] = _clip(<long>ceil((1 - ymax) * h / 2 - 0.5), 0, h - 1)
    r1[0] = _clip(<long>floor((1 - ymin) * h / 2 - 0.5), -1, h - 1)


cdef inline void _pair_geom(double[:, ::1] verts, long[:, ::1] faces,
                            Py_ssize_t f, double px, double py,
                            double* d2_out, double* t_out, int* edge_out,
                            double* delta_out) nogil:
    cdef double ax, ay, bx, by, ex, ey, qx, qy, cross, ee, t, dx, dy, d2
    cdef double cmin = 1e30, cmax = -1e30
    cdef double best = 1e30, best_t = 0.0
    cdef int e, best_e = 0
    for e in range(3):
        ax = verts[faces[f, e], 0]
        ay = verts[faces[f, e], 1]
        bx = verts[faces[f, (e + 1) % 3], 0]
        by = verts[faces[f, (e + 1) % 3], 1]
        ex = bx - ax; ey = by - ay
        qx = px - ax; qy = py - ay
        cross = ex * qy - ey * qx
        if cross < cmin: cmin = cross
        if cross > cmax: cmax = cross
        ee = ex * ex + ey * ey
        if ee > 0:
            t = (qx * ex + qy * ey) / ee
        else:
            t = 0.0
        if t < 0.0: t = 0.0
        if t > 1.0: t = 1.0
        dx = qx - t * ex
        dy = qy - t * ey
        d2 = dx * dx + dy * dy
        if d2 < best:
            best = d2; best_t = t; best_e = e
    d2_out[0] = best
    t_out[0] = best_t
    edge_out[0] = best_e
    delta_out[0] = 1.0 if (cmin >= 0 or cmax <= 0) else -1.0


def forward_soft(cnp.ndarray[double, ndim=2] verts_arr,
                 cnp.ndarray[long, ndim=2] faces_arr,
                 long h, long w, double sigma):
    cdef double[:, ::1] verts = np.ascontiguousarray(verts_arr)
    cdef long[:, ::1] faces = np.ascontiguousarray(faces_arr)
    cdef Py_ssize_t m = faces.shape[0]
    if m == 0:
        return np.zeros((h, w)), None
    cdef double margin = MARGIN_SIGMAS * sqrt(sigma)
    cdef long c0 = 0, c1 = 0, r0 = 0, r1 = 0
    cdef Py_ssize_t f, total = 0

    for f in range(m):
        _face_bbox(verts, faces, f, margin, h, w, &c0, &c1, &r0, &r1)
        if c1 >= c0 and r1 >= r0:
            total += (c1 - c0 + 1) * (r1 - r0 + 1)
    if total == 0:
        return np.zeros((h, w)), None

    face_of_arr = np.empty(total, dtype=np.int64)
    pix_arr = np.empty(total, dtype=np.int64)
    px_arr = np.empty(total)
    py_arr = np.empty(total)
    t_arr = np.empty(total)
    edge_arr = np.empty(total, dtype=np.int8)
    delta_arr = np.empty(total)
    d_arr = np.empty(total)
    log_miss_arr = np.zeros(h * w)

    cdef long[::1] face_of = face_of_arr
    cdef long[::1] pix = pix_arr
    cdef double[::1] pxv = px_arr
    cdef double[::1] pyv = py_arr
    cdef double[::1] tv = t_arr
    cdef signed char[::1] edgev = edge_arr
    cdef double[::1] deltav = delta_arr
    cdef double[::1] dv = d_arr
    cdef double[::1] log_miss = log_miss_arr

    cdef Py_ssize_t k = 0
    cdef long r, c
    cdef double px, py, d2, t, delta, infl
    cdef double margin_sq = margin * margin
    cdef int eid

    with nogil:
        for f in range(m):
            _face_bbox(verts, faces, f, margin, h, w, &c0, &c1, &r0, &r1)
            if c1 < c0 or r1 < r0:
                continue
            for r in range(r0, r1 + 1):
                py = 1.0 - (2.0 * r + 1.0) / h
                for c in range(c0, c1 + 1):
                    px = -1.0 + (2.0 * c + 1.0) / w
                    _pair_geom(verts, faces, f, px, py, &d2, &t, &eid, &delta)
                    # outside pairs past the influence cutoff contribute
                    # < sigmoid(-MARGIN_SIGMAS^2); skip them entirely
                    if delta < 0 and d2 > margin_sq:
                        continue
                    if delta > 0 and d2 > SATURATION_ARG * sigma:
                        # sigmoid saturates to exactly 1.0 here; both the
                        # clamp and its log are constants
                        infl = D_CLAMP
                        log_miss[r * w + c] += LOG_MISS_CLAMPED
                    else:
                        infl = _sigmoid(delta * d2 / sigma)
                        if infl > D_CLAMP:
                            infl = D_CLAMP
                        log_miss[r * w + c] += log1p(-infl)
                    face_of[k] = f
                    pix[k] = r * w + c
                    pxv[k] = px
                    pyv[k] = py
                    tv[k] = t
                    edgev[k] = <signed char>eid
                    deltav[k] = delta
                    dv[k] = infl
                    k += 1

    image = -np.expm1(log_miss_arr).reshape(h, w)
    if k == 0:
        return image, None
    saved = (np.asarray(verts), np.asarray(faces), sigma,
             face_of_arr[:k], pix_arr[:k], px_arr[:k], py_arr[:k], t_arr[:k],
             edge_arr[:k], delta_arr[:k], d_arr[:k], log_miss_arr, h, w)
    return image, saved


def backward_soft(saved, cnp.ndarray g_image):
    verts_arr, faces_arr, sigma, face_of_arr, pix_arr, px_arr, py_arr, \
        t_arr, edge_arr, delta_arr, d_arr, log_miss_arr, h, w = saved
    cdef double[:, ::1] verts = verts_arr
    cdef long[:, ::1] faces = faces_arr
    cdef long[::1] face_of = face_of_arr
    cdef long[::1] pix = pix_arr
    cdef double[::1] pxv = px_arr
    cdef double[::1] pyv = py_arr
    cdef double[::1] tv = t_arr
    cdef signed char[::1] edgev = edge_arr
    cdef double[::1] deltav = delta_arr
    cdef double[::1] dv = d_arr

    prod_arr = np.exp(log_miss_arr)
    g_flat_arr = np.ascontiguousarray(g_image, dtype=np.float64).reshape(-1)
    cdef double[::1] prod = prod_arr
    cdef double[::1] g_flat = g_flat_arr

    grad_arr = np.zeros_like(verts_arr)
    cdef double[:, ::1] grad = grad_arr

    cdef Py_ssize_t k, npairs = face_of.shape[0]
    cdef double sig = sigma
    cdef long va, vb
    cdef int e
    cdef double one_minus, g_d, g_arg, g_d2, t, ax, ay, bx, by, cpx, cpy, ux, uy, s
    with nogil:
        for k in range(npairs):
            one_minus = 1.0 - dv[k]
            g_d = g_flat[pix[k]] * prod[pix[k]] / one_minus
            g_arg = g_d * dv[k] * one_minus
            g_d2 = g_arg * deltav[k] / sig
            e = edgev[k]
            va = faces[face_of[k], e]
            vb = faces[face_of[k], (e + 1) % 3]
            t = tv[k]
            ax = verts[va, 0]; ay = verts[va, 1]
            bx = verts[vb, 0]; by = verts[vb, 1]
            cpx = ax + t * (bx - ax)
            cpy = ay + t * (by - ay)
            ux = pxv[k] - cpx
            uy = pyv[k] - cpy
            s = g_d2 * (-2.0)
            grad[va, 0] += s * ux * (1.0 - t)
            grad[va, 1] += s * uy * (1.0 - t)
            grad[vb, 0] += s * ux * t
            grad[vb, 1] += s * uy * t
    return grad_arr


def forward_hard(cnp.ndarray[double, ndim=2] verts_arr,
                 cnp.ndarray[long, ndim=2] faces_arr, long h, long w):
    cdef double[:, ::1] verts = np.ascontiguousarray(verts_arr)
    cdef long[:, ::1] faces = np.ascontiguousarray(faces_arr)
    cdef Py_ssize_t m = faces.shape[0]
    image_arr = np.zeros((h, w), dtype=bool)
    if m == 0:
        return image_arr
    cdef cnp.uint8_t[:, ::1] image = image_arr.view(np.uint8)
    cdef long c0 = 0, c1 = 0, r0 = 0, r1 = 0
    cdef Py_ssize_t f
    cdef long r, c
    cdef double px, py, d2, t, delta
    cdef int eid
    with nogil:
        for f in range(m):
            _face_bbox(verts, faces, f, 0.0, h, w, &c0, &c1, &r0, &r1)
            if c1 < c0 or r1 < r0:
                continue
            for r in range(r0, r1 + 1):
                py = 1.0 - (2.0 * r + 1.0) / h
                for c in range(c0, c1 + 1):
                    if image[r, c]:
                        continue
                    px = -1.0 + (2.0 * c + 1.0) / w
                    _pair_geom(verts, faces, f, px, py, &d2, &t, &eid, &delta)
                    if delta > 0:
                        image[r, c] = 1
    return image_arr
