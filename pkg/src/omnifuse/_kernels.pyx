# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-frame kernels: beamform power, bilinear warp, masked blend.

Same signatures and arithmetic as omnifuse._kernels_py; built with
-ffp-contract=off so warp/blend results are bit-identical to the numpy
fallback.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, hypot, log10

cnp.import_array()


def beamform_power_db(const double complex[:, ::1] conj_phasors,
                      const double complex[::1] samples,
                      double floor_db):
    cdef Py_ssize_t n_cells = conj_phasors.shape[0]
    cdef Py_ssize_t n_elem = conj_phasors.shape[1]
    out = np.empty(n_cells, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t c, k
    cdef double acc_re, acc_im, tr, ti, sr, si, mag, db
    with nogil:
        for c in range(n_cells):
            acc_re = 0.0
            acc_im = 0.0
            for k in range(n_elem):
                tr = conj_phasors[c, k].real
                ti = conj_phasors[c, k].imag
                sr = samples[k].real
                si = samples[k].imag
                acc_re += tr * sr - ti * si
                acc_im += tr * si + ti * sr
            mag = hypot(acc_re, acc_im)
            if mag > 0.0:
                db = 20.0 * log10(mag)
                if db < floor_db:
                    db = floor_db
            else:
                db = floor_db
            o[c] = db
    return out


def warp_bilinear_rgb(const unsigned char[:, :, ::1] src,
                      const int[:, ::1] ix0, const int[:, ::1] ix1,
                      const int[:, ::1] iy0, const int[:, ::1] iy1,
                      const double[:, ::1] fx, const double[:, ::1] fy,
                      const unsigned char[:, ::1] valid):
    cdef Py_ssize_t h = ix0.shape[0]
    cdef Py_ssize_t w = ix0.shape[1]
    out = np.zeros((h, w, 3), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] o = out
    cdef Py_ssize_t y, x, c
    cdef int x0, x1, y0, y1
    cdef double a, b, top, bot, val
    with nogil:
        for y in range(h):
            for x in range(w):
                if valid[y, x] == 0:
                    continue
                x0 = ix0[y, x]
                x1 = ix1[y, x]
                y0 = iy0[y, x]
                y1 = iy1[y, x]
                a = fx[y, x]
                b = fy[y, x]
                for c in range(3):
                    top = (1.0 - a) * src[y0, x0, c] + a * src[y0, x1, c]
                    bot = (1.0 - a) * src[y1, x0, c] + a * src[y1, x1, c]
                    val = (1.0 - b) * top + b * bot
                    o[y, x, c] = <unsigned char> floor(val + 0.5)
    return out


def warp_bilinear_field(const double[:, ::1] src,
                        const int[:, ::1] ix0, const int[:, ::1] ix1,
                        const int[:, ::1] iy0, const int[:, ::1] iy1,
                        const double[:, ::1] fx, const double[:, ::1] fy,
                        const unsigned char[:, ::1] valid,
                        double fill):
    cdef Py_ssize_t h = ix0.shape[0]
    cdef Py_ssize_t w = ix0.shape[1]
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t y, x
    cdef int x0, x1, y0, y1
    cdef double a, b, top, bot
    with nogil:
        for y in range(h):
            for x in range(w):
                if valid[y, x] == 0:
                    o[y, x] = fill
                    continue
                x0 = ix0[y, x]
                x1 = ix1[y, x]
                y0 = iy0[y, x]
                y1 = iy1[y, x]
                a = fx[y, x]
                b = fy[y, x]
                top = (1.0 - a) * src[y0, x0] + a * src[y0, x1]
                bot = (1.0 - a) * src[y1, x0] + a * src[y1, x1]
                o[y, x] = (1.0 - b) * top + b * bot
    return out


def blend_masked(const unsigned char[:, :, ::1] rgb,
                 const unsigned char[:, :, ::1] sensor,
                 const unsigned char[:, ::1] mask,
                 const unsigned char[:, ::1] validity,
                 double alpha):
    cdef Py_ssize_t h = rgb.shape[0]
    cdef Py_ssize_t w = rgb.shape[1]
    out = np.empty((h, w, 3), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] o = out
    cdef Py_ssize_t y, x, c
    cdef double beta = 1.0 - alpha
    with nogil:
        for y in range(h):
            for x in range(w):
                if mask[y, x] != 0 and validity[y, x] != 0:
                    for c in range(3):
                        o[y, x, c] = <unsigned char> floor(
                            alpha * sensor[y, x, c] + beta * rgb[y, x, c] + 0.5)
                else:
                    for c in range(3):
                        o[y, x, c] = rgb[y, x, c]
    return out
