"""Pure-numpy ray-capsule raycast kernel (fallback for mvdp._raycast).

Vectorizes over the pixels of each capsule's screen bound. Expressions
mirror the compiled kernel term for term so the two backends produce
bit-identical buffers.
"""

import numpy as np

BACKEND = "numpy"

_TMIN = 1e-9


def _sphere_hits(c0, c1, c2, dx, dy, dd, r2):
    qb = -(c0 * dx + c1 * dy + c2)
    qc = c0 * c0 + c1 * c1 + c2 * c2 - r2
    disc = qb * qb - dd * qc
    with np.errstate(invalid="ignore"):
        t = (-qb - np.sqrt(disc)) / dd
    return np.where((disc >= 0.0) & (t > _TMIN), t, -1.0)


def raycast_capsules(fx, fy, cx, cy, seg_a, seg_b, radius, labels, bounds,
                     zbuf, labbuf):
    """Accumulate nearest capsule hits into (zbuf, labbuf); see mvdp._raycast."""
    for m in range(seg_a.shape[0]):
        x0, x1, y0, y1 = bounds[m]
        if x0 >= x1 or y0 >= y1:
            continue
        a0, a1, a2 = seg_a[m]
        ba0 = seg_b[m, 0] - a0
        ba1 = seg_b[m, 1] - a1
        ba2 = seg_b[m, 2] - a2
        baba = ba0 * ba0 + ba1 * ba1 + ba2 * ba2
        baoa = -(ba0 * a0 + ba1 * a1 + ba2 * a2)
        oaoa = a0 * a0 + a1 * a1 + a2 * a2
        r2 = radius[m] * radius[m]

        dx = (np.arange(x0, x1, dtype=np.float64) - cx) / fx
        dy = ((np.arange(y0, y1, dtype=np.float64) - cy) / fy)[:, None]
        dd = dx * dx + dy * dy + 1.0
        bard = ba0 * dx + ba1 * dy + ba2
        daoa = -(a0 * dx + a1 * dy + a2)
        qa = dd * baba - bard * bard
        qb = daoa * baba - bard * baoa
        qc = (oaoa - r2) * baba - baoa * baoa
        disc = qb * qb - qa * qc

        valid = disc >= 0.0
        nonpar = qa > 1e-12 * dd * baba
        with np.errstate(invalid="ignore", divide="ignore"):
            t_cyl = (-qb - np.sqrt(disc)) / qa
        y = baoa + t_cyl * bard

        t_a = _sphere_hits(a0, a1, a2, dx, dy, dd, r2)
        t_b = _sphere_hits(a0 + ba0, a1 + ba1, a2 + ba2, dx, dy, dd, r2)

        hit = np.full(dd.shape, -1.0)
        in_band = (y >= 0.0) & (y <= baba)
        np.copyto(hit, t_cyl, where=nonpar & valid & in_band & (t_cyl > _TMIN))
        np.copyto(hit, t_a, where=nonpar & valid & (y < 0.0))
        np.copyto(hit, t_b, where=nonpar & valid & (y > baba))
        par = ~nonpar & valid
        if par.any():
            par_hit = np.where((t_b > 0.0) & ((t_a < 0.0) | (t_b < t_a)), t_b, t_a)
            np.copyto(hit, par_hit, where=par)

        zwin = zbuf[y0:y1, x0:x1]
        lwin = labbuf[y0:y1, x0:x1]
        closer = (hit > 0.0) & (hit < zwin)
        np.copyto(zwin, hit, where=closer)
        lwin[closer] = labels[m]
