# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ray-capsule raycast kernel.

Hot loop of depth rendering: for every pixel inside a capsule's conservative
screen bound, intersect the camera ray with the capsule (cylinder body plus
sphere caps) and keep the nearest camera-space z in a z-buffer.

The arithmetic mirrors mvdp._raycast_np expression-for-expression so both
backends produce bit-identical buffers (the extension is compiled with
-ffp-contract=off for that reason).
"""

from libc.math cimport sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "ext"


def raycast_capsules(double fx, double fy, double cx, double cy,
                     double[:, ::1] seg_a, double[:, ::1] seg_b,
                     double[::1] radius,
                     unsigned char[::1] labels,
                     long long[:, ::1] bounds,
                     double[:, ::1] zbuf,
                     unsigned char[:, ::1] labbuf):
    """Accumulate nearest hits of all capsules into (zbuf, labbuf).

    Capsule endpoints are camera-space; bounds rows are pixel windows
    [x0, x1, y0, y1) already clipped to the image. zbuf must be +inf and
    labbuf 0 where nothing has been rendered yet; entries hold camera-space
    z (depth) and the capsule's label.
    """
    cdef Py_ssize_t m, ix, iy
    cdef Py_ssize_t n_caps = seg_a.shape[0]
    cdef long long x0, x1, y0, y1
    cdef double a0, a1, a2, ba0, ba1, ba2, baba, baoa, oaoa, r, r2
    cdef double dx, dy, dd, bard, daoa
    cdef double qa, qb, qc, disc, t, y, hit
    cdef double tmin = 1e-9

    with nogil:
        for m in range(n_caps):
            a0 = seg_a[m, 0]; a1 = seg_a[m, 1]; a2 = seg_a[m, 2]
            ba0 = seg_b[m, 0] - a0; ba1 = seg_b[m, 1] - a1; ba2 = seg_b[m, 2] - a2
            baba = ba0 * ba0 + ba1 * ba1 + ba2 * ba2
            baoa = -(ba0 * a0 + ba1 * a1 + ba2 * a2)
            oaoa = a0 * a0 + a1 * a1 + a2 * a2
            r = radius[m]
            r2 = r * r
            x0 = bounds[m, 0]; x1 = bounds[m, 1]
            y0 = bounds[m, 2]; y1 = bounds[m, 3]
            for iy in range(y0, y1):
                dy = (iy - cy) / fy
                for ix in range(x0, x1):
                    dx = (ix - cx) / fx
                    dd = dx * dx + dy * dy + 1.0
                    bard = ba0 * dx + ba1 * dy + ba2
                    daoa = -(a0 * dx + a1 * dy + a2)
                    qa = dd * baba - bard * bard
                    qb = daoa * baba - bard * baoa
                    qc = (oaoa - r2) * baba - baoa * baoa
                    disc = qb * qb - qa * qc
                    if disc < 0.0:
                        continue  # misses the infinite cylinder, so everything
                    hit = -1.0
                    if qa > 1e-12 * dd * baba:
                        t = (-qb - sqrt(disc)) / qa
                        y = baoa + t * bard
                        if 0.0 <= y <= baba:
                            if t > tmin:
                                hit = t
                        elif y < 0.0:
                            hit = _sphere_hit(a0, a1, a2, dx, dy, dd, r2, tmin)
                        else:
                            hit = _sphere_hit(a0 + ba0, a1 + ba1, a2 + ba2,
                                              dx, dy, dd, r2, tmin)
                    else:
                        # Ray (nearly) parallel to the axis: caps only.
                        hit = _sphere_hit(a0, a1, a2, dx, dy, dd, r2, tmin)
                        t = _sphere_hit(a0 + ba0, a1 + ba1, a2 + ba2,
                                        dx, dy, dd, r2, tmin)
                        if t > 0.0 and (hit < 0.0 or t < hit):
                            hit = t
                    if hit > 0.0 and hit < zbuf[iy, ix]:
                        zbuf[iy, ix] = hit
                        labbuf[iy, ix] = labels[m]


cdef inline double _sphere_hit(double c0, double c1, double c2,
                               double dx, double dy, double dd,
                               double r2, double tmin) nogil:
    cdef double qb = -(c0 * dx + c1 * dy + c2)
    cdef double qc = c0 * c0 + c1 * c1 + c2 * c2 - r2
    cdef double disc = qb * qb - dd * qc
    cdef double t
    if disc < 0.0:
        return -1.0
    t = (-qb - sqrt(disc)) / dd
    if t > tmin:
        return t
    return -1.0
