"""Raycast depth + label rendering from sampled virtual cameras.

Depth frames are uint8 grids of quantized levels: [0.5, 8.0] m maps onto
levels 0..254 and level 255 is the invalid/background sentinel, so background
stays representable in-band. Label frames are uint8 part ids with 0 =
background; by construction a pixel is labeled iff its depth is non-sentinel.

Depth is rendered against clothing-inflated capsule radii while the label of
a pixel is the skin part label of the same nearest-hit capsule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .body import Character, PosedGeometry, PosturePool, pose_character
from .geometry import CameraIntrinsics, CameraParams, look_at
from .raycast import raycast_frame

DEPTH_NEAR = 0.5
DEPTH_FAR = 8.0
DEPTH_LEVELS = 255           # valid levels 0..254
DEPTH_SENTINEL = 255
DEPTH_STEP = (DEPTH_FAR - DEPTH_NEAR) / (DEPTH_LEVELS - 1)

DEFAULT_RESOLUTION = 128


class EmptyPool(ValueError):
    """A sample draw was attempted from an empty character/posture pool."""


def quantize_depth(z: np.ndarray) -> np.ndarray:
    """Map meters to levels 0..254 (clamped); the caller handles misses."""
    levels = np.rint((np.asarray(z, dtype=np.float64) - DEPTH_NEAR) / DEPTH_STEP)
    return np.clip(levels, 0, DEPTH_LEVELS - 1).astype(np.uint8)


def dequantize_depth(levels: np.ndarray) -> np.ndarray:
    """Meters for levels 0..254; sentinel levels are the caller's problem."""
    return DEPTH_NEAR + np.asarray(levels, dtype=np.float64) * DEPTH_STEP


@dataclass(frozen=True)
class CameraRange:
    """Uniform sampling intervals for camera placement around a character."""

    azimuth: tuple[float, float] = (-math.pi, math.pi)
    distance: tuple[float, float] = (1.5, 4.0)
    elevation: tuple[float, float] = (math.radians(-15.0), math.radians(30.0))
    target_jitter: float = 0.15

    def __post_init__(self):
        if not (-math.pi <= self.azimuth[0] <= self.azimuth[1] <= math.pi):
            raise ValueError("azimuth interval must lie within [-pi, pi]")
        if not (0.0 < self.distance[0] <= self.distance[1] < DEPTH_FAR):
            raise ValueError(f"distance interval must lie within (0, {DEPTH_FAR})")
        if self.elevation[0] > self.elevation[1]:
            raise ValueError("elevation interval is inverted")
        if self.target_jitter < 0.0:
            raise ValueError("target_jitter must be nonnegative")

    @staticmethod
    def fixed(azimuth: float, distance: float, elevation: float) -> "CameraRange":
        return CameraRange((azimuth, azimuth), (distance, distance),
                           (elevation, elevation), 0.0)


def default_intrinsics(size: int = DEFAULT_RESOLUTION) -> CameraIntrinsics:
    """Square frame with a Kinect-2-like ~70 degree field of view."""
    return CameraIntrinsics(focal_x=0.72 * size, focal_y=0.72 * size,
                            principal_x=(size - 1) / 2.0,
                            principal_y=(size - 1) / 2.0,
                            width=size, height=size)


@dataclass(frozen=True)
class CameraDraw:
    """The raw random numbers of one camera draw, before the character's
    centroid is known (placement realizes around the posed centroid)."""

    azimuth: float
    elevation: float
    distance: float
    jitter: np.ndarray


def draw_camera(cam_range: CameraRange, rng: np.random.Generator) -> CameraDraw:
    return CameraDraw(
        azimuth=rng.uniform(*cam_range.azimuth),
        elevation=rng.uniform(*cam_range.elevation),
        distance=rng.uniform(*cam_range.distance),
        jitter=rng.uniform(-cam_range.target_jitter, cam_range.target_jitter, size=3),
    )


def realize_camera(draw: CameraDraw, centroid: np.ndarray,
                   intrinsics: CameraIntrinsics) -> CameraParams:
    direction = np.array([
        math.cos(draw.elevation) * math.sin(draw.azimuth),
        math.sin(draw.elevation),
        math.cos(draw.elevation) * math.cos(draw.azimuth),
    ])
    eye = centroid + draw.distance * direction
    target = centroid + draw.jitter
    return CameraParams(intrinsics, look_at(eye, target))


def sample_camera(cam_range: CameraRange, rng: np.random.Generator,
                  centroid: np.ndarray,
                  intrinsics: CameraIntrinsics | None = None) -> CameraParams:
    """One camera at uniform (azimuth, elevation, distance) around ``centroid``,
    aimed at the jittered centroid."""
    intrinsics = intrinsics or default_intrinsics()
    return realize_camera(draw_camera(cam_range, rng), centroid, intrinsics)


def render(geometry: PosedGeometry, cam: CameraParams,
           clothing_factor: float = 1.0, noise_sigma: float = 0.0,
           rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Render (depth levels, part labels) for a posed character.

    Clothing inflates the intersection radii; the assigned label is the skin
    label of the nearest inflated hit, which keeps depth and label co-support
    exact. Optional Gaussian depth noise (meters) perturbs hits before
    quantization.
    """
    world_to_cam = cam.camera_to_world.inverse()
    seg_a = world_to_cam.apply(geometry.seg_a)
    seg_b = world_to_cam.apply(geometry.seg_b)
    zbuf, labels = raycast_frame(seg_a, seg_b, geometry.radius * clothing_factor,
                                 geometry.labels, cam.intrinsics)
    hits = np.isfinite(zbuf)
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("depth noise requires an rng")
        zbuf = zbuf + rng.normal(0.0, noise_sigma, size=zbuf.shape)
    depth = np.where(hits, quantize_depth(np.where(hits, zbuf, DEPTH_NEAR)),
                     np.uint8(DEPTH_SENTINEL)).astype(np.uint8)
    return depth, labels


@dataclass(frozen=True)
class Sample:
    """n calibrated views of one posed character plus groundtruth joints."""

    depth: np.ndarray    # (n, H, W) uint8 quantized levels
    labels: np.ndarray   # (n, H, W) uint8 part ids
    cameras: tuple[CameraParams, ...]
    posture_id: int
    character_id: int
    joint_positions: np.ndarray  # (J, 3) world meters
    noise_sigma: float = 0.0

    @property
    def num_views(self) -> int:
        return len(self.cameras)


def sample_views(char_pool: list[Character], cam_range: CameraRange,
                 posture_pool: PosturePool, n: int, seed,
                 intrinsics: CameraIntrinsics | None = None,
                 noise_sigma: float = 0.0) -> Sample:
    """One dataset sample: character ~ Unif, n camera draws ~ Unif, posture
    ~ Unif, then render every view. Deterministic in ``seed``."""
    if not char_pool:
        raise EmptyPool("character pool is empty")
    if n < 1:
        raise ValueError("need at least one camera")
    intrinsics = intrinsics or default_intrinsics()
    rng = np.random.default_rng(seed)

    character = char_pool[int(rng.integers(len(char_pool)))]
    draws = [draw_camera(cam_range, rng) for _ in range(n)]
    posture = posture_pool.draw(rng)

    geometry = pose_character(character, posture)
    centroid = geometry.joint_positions.mean(axis=0)
    cameras = tuple(realize_camera(d, centroid, intrinsics) for d in draws)

    depth = np.empty((n, intrinsics.height, intrinsics.width), dtype=np.uint8)
    labels = np.empty_like(depth)
    for i, cam in enumerate(cameras):
        depth[i], labels[i] = render(geometry, cam, character.clothing_factor,
                                     noise_sigma, rng)
    return Sample(depth, labels, cameras, posture.posture_id,
                  character.character_id, geometry.joint_positions, noise_sigma)


def render_sequence(character: Character, postures, cameras,
                    noise_sigma: float = 0.0, rng=None) -> list[Sample]:
    """Render a temporally ordered posture sequence against fixed cameras."""
    samples = []
    for posture in postures:
        geometry = pose_character(character, posture)
        n = len(cameras)
        h, w = cameras[0].intrinsics.height, cameras[0].intrinsics.width
        depth = np.empty((n, h, w), dtype=np.uint8)
        labels = np.empty_like(depth)
        for i, cam in enumerate(cameras):
            depth[i], labels[i] = render(geometry, cam, character.clothing_factor,
                                         noise_sigma, rng)
        samples.append(Sample(depth, labels, tuple(cameras), posture.posture_id,
                              character.character_id, geometry.joint_positions,
                              noise_sigma))
    return samples
