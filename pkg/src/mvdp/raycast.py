"""Raycast backend selection and the shared per-frame driver.

The compiled kernel (mvdp._raycast, built from _raycast.pyx) is used when
importable; otherwise the numpy kernel takes over. Set MVDP_NO_EXT=1 to force
the fallback. ``mvdp bench`` compares the two.

Both kernels consume identical inputs, including the conservative per-capsule
screen bounds computed here, and produce bit-identical buffers.
"""

import os

import numpy as np

from . import _raycast_np

if os.environ.get("MVDP_NO_EXT") == "1":
    _impl = _raycast_np
else:
    try:
        from . import _raycast as _impl
    except ImportError:
        _impl = _raycast_np

BACKEND = _impl.BACKEND


def available_backends():
    """Mapping of backend name -> kernel module, for benchmarks and tests."""
    impls = {_raycast_np.BACKEND: _raycast_np}
    try:
        from . import _raycast
        impls[_raycast.BACKEND] = _raycast
    except ImportError:
        pass
    return impls


def capsule_screen_bounds(seg_a, seg_b, radius, intrinsics):
    """Conservative pixel windows [x0, x1, y0, y1) per capsule.

    A capsule's projection is bounded by the projections of the two spheres
    capping it; each sphere's pixel extent is bounded by evaluating
    f*(x +- r)/(z -+ r) at the endpoint. Capsules fully behind the camera get
    an empty window; capsules straddling the near plane get the full frame.
    """
    fx, fy = intrinsics.focal_x, intrinsics.focal_y
    cx, cy = intrinsics.principal_x, intrinsics.principal_y
    w, h = intrinsics.width, intrinsics.height
    n = seg_a.shape[0]
    bounds = np.zeros((n, 4), dtype=np.int64)
    for m in range(n):
        r = radius[m]
        lo = np.array([np.inf, np.inf])
        hi = np.array([-np.inf, -np.inf])
        behind = 0
        for end in (seg_a[m], seg_b[m]):
            x, y, z = end
            if z - r <= 1e-6:
                behind += 1
                continue
            for axis, (f, c, v) in enumerate(((fx, cx, x), (fy, cy, y))):
                pmin = f * min((v - r) / (z - r), (v - r) / (z + r)) + c
                pmax = f * max((v + r) / (z - r), (v + r) / (z + r)) + c
                lo[axis] = min(lo[axis], pmin)
                hi[axis] = max(hi[axis], pmax)
        if behind == 2 and seg_a[m, 2] <= 1e-6 and seg_b[m, 2] <= 1e-6:
            continue  # entirely behind: empty window
        if behind > 0:
            lo[:] = 0.0
            hi[:] = (w - 1, h - 1)
        x0 = max(0, int(np.floor(lo[0])) - 1)
        y0 = max(0, int(np.floor(lo[1])) - 1)
        x1 = min(w, int(np.ceil(hi[0])) + 2)
        y1 = min(h, int(np.ceil(hi[1])) + 2)
        if x0 < x1 and y0 < y1:
            bounds[m] = (x0, x1, y0, y1)
    return bounds


def raycast_frame(seg_a, seg_b, radius, labels, intrinsics, kernel=None):
    """Nearest-hit z and label buffers for camera-space capsules.

    Returns (zbuf (H, W) float64 with +inf misses, labels (H, W) uint8 with
    0 misses).
    """
    kernel = kernel or _impl
    intr = intrinsics
    seg_a = np.ascontiguousarray(seg_a, dtype=np.float64)
    seg_b = np.ascontiguousarray(seg_b, dtype=np.float64)
    radius = np.ascontiguousarray(radius, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    bounds = capsule_screen_bounds(seg_a, seg_b, radius, intr)
    zbuf = np.full((intr.height, intr.width), np.inf, dtype=np.float64)
    labbuf = np.zeros((intr.height, intr.width), dtype=np.uint8)
    kernel.raycast_capsules(float(intr.focal_x), float(intr.focal_y),
                            float(intr.principal_x), float(intr.principal_y),
                            seg_a, seg_b, radius, labels, bounds, zbuf, labbuf)
    return zbuf, labbuf
