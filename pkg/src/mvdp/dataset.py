"""MVDS dataset container, manifests, and curriculum dataset generation.

Container layout (all little-endian):

    magic     4 bytes  b"MVDS"
    version   u32      1
    stage     u8       0=easy 1=inter 2=hard
    n_cameras u8
    width     u16
    height    u16
    n_joints  u16
    n_labels  u16
    samples   u32
    then per sample:
      posture_id   u32
      character_id u16
      per camera:
        fx, fy, cx, cy   4 x f64
        width, height    2 x u16
        camera_to_world  12 x f64, row-major 3x4 [R | t]
        depth            u8[w*h]
        labels           u8[w*h]
      joints f64[3*J]

Records have a fixed size, so the reader seeks rather than indexes. The
manifest is a plain-text key: value file next to the container.

Generation is deterministic: sample i derives its seed from
(master seed, stage, split, i), so output bytes do not depend on worker
scheduling. MVDP_THREADS (or the workers argument) fans rendering out over a
thread pool; the compiled raycast kernel releases the GIL.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .body import (
    NUM_PARTS,
    PosturePool,
    build_character_pool,
    default_skeleton,
)
from .geometry import CameraIntrinsics, CameraParams, RigidTransform
from .render import CameraRange, Sample, default_intrinsics, sample_views

MAGIC = b"MVDS"
VERSION = 1
STAGE_CODES = {"easy": 0, "inter": 1, "hard": 2}
STAGE_NAMES = {v: k for k, v in STAGE_CODES.items()}
SPLITS = ("train", "validation", "test")

# Desk-scale curriculum sizes, preserving the 1M : 1.3M : 0.3M ratio of the
# full-scale datasets at 1/50 scale.
DEFAULT_STAGE_SIZES = {"easy": 20_000, "inter": 26_000, "hard": 6_000}
SPLIT_FRACTIONS = {"train": 0.8, "validation": 0.1, "test": 0.1}


class InvalidStage(ValueError):
    """Unknown curriculum stage name."""


class IoFailure(OSError):
    """Container or manifest could not be written/read."""


@dataclass(frozen=True)
class DatasetManifest:
    stage: str
    split: str
    samples: int
    cameras: int
    seed: int
    width: int
    height: int
    joints: int
    labels: int
    container: str
    posture_ids: tuple[int, ...]

    def as_text(self) -> str:
        lines = [f"stage: {self.stage}", f"split: {self.split}",
                 f"samples: {self.samples}", f"cameras: {self.cameras}",
                 f"seed: {self.seed}", f"width: {self.width}",
                 f"height: {self.height}", f"joints: {self.joints}",
                 f"labels: {self.labels}", f"container: {self.container}",
                 "posture_ids: " + ",".join(str(i) for i in self.posture_ids)]
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse(text: str) -> "DatasetManifest":
        kv = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition(":")
                kv[key.strip()] = value.strip()
        ids = tuple(int(t) for t in kv["posture_ids"].split(",") if t)
        return DatasetManifest(kv["stage"], kv["split"], int(kv["samples"]),
                               int(kv["cameras"]), int(kv["seed"]),
                               int(kv["width"]), int(kv["height"]),
                               int(kv["joints"]), int(kv["labels"]),
                               kv["container"], ids)


_HEADER = struct.Struct("<4sIBBHHHHI")
_SAMPLE_HEAD = struct.Struct("<IH")
_CAM_HEAD = struct.Struct("<4dHH12d")


def _pose_matrix(cam: CameraParams) -> np.ndarray:
    return np.hstack([cam.camera_to_world.rotation,
                      cam.camera_to_world.translation[:, None]])


def write_dataset(path, stage: str, samples: list[Sample]) -> None:
    """Write a finished sample list as one MVDS container."""
    if stage not in STAGE_CODES:
        raise InvalidStage(f"unknown stage {stage!r}")
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    first = samples[0]
    n = first.num_views
    h, w = first.depth.shape[1:]
    j = first.joint_positions.shape[0]
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, STAGE_CODES[stage], n, w, h,
                                  j, NUM_PARTS, len(samples)))
            for s in samples:
                fh.write(_SAMPLE_HEAD.pack(s.posture_id, s.character_id))
                for i, cam in enumerate(s.cameras):
                    intr = cam.intrinsics
                    fh.write(_CAM_HEAD.pack(intr.focal_x, intr.focal_y,
                                            intr.principal_x, intr.principal_y,
                                            intr.width, intr.height,
                                            *_pose_matrix(cam).ravel()))
                    fh.write(s.depth[i].tobytes())
                    fh.write(s.labels[i].tobytes())
                fh.write(np.ascontiguousarray(s.joint_positions,
                                              dtype=np.float64).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write dataset {path}: {exc}") from exc


class DatasetReader:
    """Seek-based random access to an MVDS container."""

    def __init__(self, path):
        self.path = Path(path)
        try:
            self._fh = open(self.path, "rb")
        except OSError as exc:
            raise IoFailure(f"cannot open dataset {path}: {exc}") from exc
        header = self._fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise IoFailure(f"{path}: truncated header")
        (magic, version, stage_code, self.n_cameras, self.width, self.height,
         self.n_joints, self.n_labels, self.num_samples) = _HEADER.unpack(header)
        if magic != MAGIC:
            raise IoFailure(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise IoFailure(f"{path}: unsupported version {version}")
        self.stage = STAGE_NAMES[stage_code]
        self._grid = self.width * self.height
        self._cam_block = _CAM_HEAD.size + 2 * self._grid
        self._record = (_SAMPLE_HEAD.size + self.n_cameras * self._cam_block
                        + 24 * self.n_joints)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __len__(self):
        return self.num_samples

    def _offset(self, index: int) -> int:
        if not 0 <= index < self.num_samples:
            raise IndexError(index)
        return _HEADER.size + index * self._record

    def sample(self, index: int) -> Sample:
        self._fh.seek(self._offset(index))
        raw = self._fh.read(self._record)
        posture_id, character_id = _SAMPLE_HEAD.unpack_from(raw, 0)
        pos = _SAMPLE_HEAD.size
        depth = np.empty((self.n_cameras, self.height, self.width), dtype=np.uint8)
        labels = np.empty_like(depth)
        cameras = []
        for i in range(self.n_cameras):
            fields = _CAM_HEAD.unpack_from(raw, pos)
            fx, fy, cx, cy = fields[:4]
            w, h = fields[4:6]
            mat = np.array(fields[6:], dtype=np.float64).reshape(3, 4)
            cameras.append(CameraParams(
                CameraIntrinsics(fx, fy, cx, cy, w, h),
                RigidTransform(mat[:, :3], mat[:, 3])))
            pos += _CAM_HEAD.size
            depth[i] = np.frombuffer(raw, np.uint8, self._grid, pos).reshape(
                self.height, self.width)
            pos += self._grid
            labels[i] = np.frombuffer(raw, np.uint8, self._grid, pos).reshape(
                self.height, self.width)
            pos += self._grid
        joints = np.frombuffer(raw, np.float64, 3 * self.n_joints, pos).reshape(
            self.n_joints, 3)
        return Sample(depth, labels, tuple(cameras), posture_id, character_id,
                      joints.copy())

    def frame(self, sample_index: int, cam_index: int) -> tuple[np.ndarray, np.ndarray]:
        """Depth/label grids of one view without decoding the whole sample."""
        if not 0 <= cam_index < self.n_cameras:
            raise IndexError(cam_index)
        base = (self._offset(sample_index) + _SAMPLE_HEAD.size
                + cam_index * self._cam_block + _CAM_HEAD.size)
        self._fh.seek(base)
        raw = self._fh.read(2 * self._grid)
        depth = np.frombuffer(raw, np.uint8, self._grid, 0).reshape(
            self.height, self.width).copy()
        labels = np.frombuffer(raw, np.uint8, self._grid, self._grid).reshape(
            self.height, self.width).copy()
        return depth, labels


def _worker_count(workers: int | None) -> int:
    if workers is not None:
        return max(1, workers)
    env = os.environ.get("MVDP_THREADS", "")
    if env.isdigit() and int(env) > 0:
        return int(env)
    return 1


def generate_dataset(stage: str, split: str, count: int, n_cameras: int,
                     out_dir, seed: int, size: int = 128,
                     noise_sigma: float = 0.0,
                     workers: int | None = None) -> DatasetManifest:
    """Generate a curriculum split and write container + manifest.

    Posture ids are partitioned 8/1/1 across train/validation/test by id
    residue before any sampling happens, so splits are posture-disjoint by
    construction. The character pool depends on (stage, seed) only: reusing
    one seed across splits reuses the characters, as the curriculum intends.
    """
    if stage not in STAGE_CODES:
        raise InvalidStage(f"unknown stage {stage!r}")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    if count < 1:
        raise ValueError("count must be >= 1")

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc}") from exc

    chars = build_character_pool(stage, seed)
    pool = PosturePool.for_stage(stage, split)
    intr = default_intrinsics(size)
    cam_range = CameraRange()
    stage_code, split_code = STAGE_CODES[stage], SPLITS.index(split)

    def make(i: int) -> Sample:
        sample_seed = np.random.SeedSequence((seed, stage_code, split_code, i))
        return sample_views(chars, cam_range, pool, n_cameras, sample_seed,
                            intr, noise_sigma)

    n_workers = _worker_count(workers)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool_exec:
            samples = list(pool_exec.map(make, range(count)))
    else:
        samples = [make(i) for i in range(count)]

    container = f"{stage}_{split}.mvds"
    write_dataset(out_dir / container, stage, samples)
    manifest = DatasetManifest(
        stage=stage, split=split, samples=count, cameras=n_cameras, seed=seed,
        width=size, height=size, joints=default_skeleton().num_joints,
        labels=NUM_PARTS, container=container,
        posture_ids=tuple(sorted({s.posture_id for s in samples})))
    try:
        (out_dir / f"{stage}_{split}.manifest").write_text(manifest.as_text())
    except OSError as exc:
        raise IoFailure(f"cannot write manifest: {exc}") from exc
    return manifest


def read_manifest(path) -> DatasetManifest:
    try:
        return DatasetManifest.parse(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
