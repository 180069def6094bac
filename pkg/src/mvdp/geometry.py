"""Camera models, rigid transforms, and small symmetric-matrix numerics.

Conventions used by every module in this package:

* Image frame: origin at the top-left corner, +x right (columns), +y down
  (rows), pixel centers on integer coordinates.
* Camera frame: right-handed, +z forward along the optical axis, +x along
  image x, +y along image y.
* World frame: right-handed, +y up.
* Extrinsics are stored camera-to-world. ``RigidTransform.apply`` maps
  camera-frame points into the world; its inverse maps world to camera.

All positions are meters, all angles radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHONORMALITY_TOL = 1e-9


class GeometryError(ValueError):
    """Base class for geometric precondition violations."""


class PointBehindCamera(GeometryError):
    """Raised when projecting a point with camera-space z <= 0."""


class NonPositiveDepth(GeometryError):
    """Raised when backprojecting a pixel with depth <= 0."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float
    width: int
    height: int

    def __post_init__(self):
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise ValueError(f"focal lengths must be positive, got "
                             f"({self.focal_x}, {self.focal_y})")
        if self.width < 16 or self.height < 16:
            raise ValueError(f"image size must be at least 16x16, got "
                             f"{self.width}x{self.height}")
        if not (0.0 <= self.principal_x <= self.width - 1):
            raise ValueError(f"principal_x {self.principal_x} outside image")
        if not (0.0 <= self.principal_y <= self.height - 1):
            raise ValueError(f"principal_y {self.principal_y} outside image")


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation; ``apply(p) = rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tra = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=ORTHONORMALITY_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) batch."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -rot_inv @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return the transform equivalent to applying ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class CameraParams:
    """Intrinsics plus camera-to-world extrinsics."""

    intrinsics: CameraIntrinsics
    camera_to_world: RigidTransform = field(default_factory=RigidTransform.identity)


def rotation_about_axis(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation for an axis-angle vector (angle = vector norm)."""
    v = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    angle = float(np.linalg.norm(v))
    if angle < 1e-14:
        return np.eye(3)
    x, y, z = v / angle
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def look_at(eye: np.ndarray, target: np.ndarray, up: np.ndarray = (0.0, 1.0, 0.0)) -> RigidTransform:
    """Camera-to-world transform for a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should map (approximately) to image-up;
    with the +y-down image convention the camera y axis points opposite it.
    """
    eye = np.asarray(eye, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    down = -np.asarray(up, dtype=np.float64).reshape(3)
    down = down - np.dot(down, forward) * forward
    norm = np.linalg.norm(down)
    if norm < 1e-9:
        # Looking along the up axis; pick an arbitrary perpendicular.
        down = np.array([1.0, 0.0, 0.0])
        down = down - np.dot(down, forward) * forward
        norm = np.linalg.norm(down)
    ydir = down / norm
    xdir = np.cross(ydir, forward)
    rot = np.column_stack([xdir, ydir, forward])
    return RigidTransform(rot, eye)


def project(point: np.ndarray, cam: CameraParams) -> tuple[np.ndarray, float]:
    """Project a world point to (pixel, depth); depth is camera-space z.

    Raises PointBehindCamera when the point has camera-space z <= 0.
    """
    world_to_cam = cam.camera_to_world.inverse()
    p = world_to_cam.apply(np.asarray(point, dtype=np.float64).reshape(3))
    if p[2] <= 0.0:
        raise PointBehindCamera(f"camera-space z = {p[2]:.6g}")
    intr = cam.intrinsics
    pixel = np.array([intr.focal_x * p[0] / p[2] + intr.principal_x,
                      intr.focal_y * p[1] / p[2] + intr.principal_y])
    return pixel, float(p[2])


def project_many(points: np.ndarray, cam: CameraParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; caller is responsible for z > 0 filtering.

    Returns (pixels (N, 2), depths (N,)); pixels for z <= 0 are nan.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    p = cam.camera_to_world.inverse().apply(pts)
    z = p[:, 2]
    intr = cam.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.where(z > 0, intr.focal_x * p[:, 0] / z + intr.principal_x, np.nan)
        py = np.where(z > 0, intr.focal_y * p[:, 1] / z + intr.principal_y, np.nan)
    return np.column_stack([px, py]), z


def backproject(pixel: np.ndarray, depth: float, cam: CameraParams) -> np.ndarray:
    """World point of the camera ray through ``pixel`` at camera-space z ``depth``."""
    if depth <= 0.0:
        raise NonPositiveDepth(f"depth = {depth:.6g}")
    u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
    intr = cam.intrinsics
    p_cam = np.array([(u - intr.principal_x) / intr.focal_x * depth,
                      (v - intr.principal_y) / intr.focal_y * depth,
                      depth])
    return cam.camera_to_world.apply(p_cam)


def backproject_many(pixels: np.ndarray, depths: np.ndarray, cam: CameraParams) -> np.ndarray:
    """Vectorized backprojection of (N, 2) pixels at (N,) positive depths."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    z = np.asarray(depths, dtype=np.float64).reshape(-1)
    if np.any(z <= 0.0):
        raise NonPositiveDepth("all depths must be positive")
    intr = cam.intrinsics
    p_cam = np.column_stack([(px[:, 0] - intr.principal_x) / intr.focal_x * z,
                             (px[:, 1] - intr.principal_y) / intr.focal_y * z,
                             z])
    return cam.camera_to_world.apply(p_cam)


def sym_eigenvalues(mat: np.ndarray, sym_tol: float = 1e-8) -> np.ndarray:
    """Eigenvalues of a symmetric 3x3 matrix, descending.

    Cyclic Jacobi rotations, iterated until the off-diagonal norm falls below
    1e-12 relative to the matrix scale. Robust for the near-degenerate
    covariance matrices this package feeds it (single-point classes give the
    zero matrix).
    """
    a = np.array(mat, dtype=np.float64)
    if a.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()))
    if not np.allclose(a, a.T, atol=sym_tol * scale):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)

    for _ in range(64):
        off = math.sqrt(a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2)
        if off <= 1e-12 * scale:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[p, q]
            if abs(apq) <= 1e-30 * scale:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
            c = 1.0 / math.sqrt(t * t + 1.0)
            s = t * c
            # Rotate rows/columns p and q in place.
            app, aqq = a[p, p], a[q, q]
            a[p, p] = app - t * apq
            a[q, q] = aqq + t * apq
            a[p, q] = 0.0
            a[q, p] = 0.0
            r = 3 - p - q  # the remaining index
            arp, arq = a[r, p], a[r, q]
            a[r, p] = c * arp - s * arq
            a[p, r] = a[r, p]
            a[r, q] = s * arp + c * arq
            a[q, r] = a[r, q]

    return np.sort(np.diagonal(a))[::-1].copy()
