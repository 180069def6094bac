"""Procedural articulated characters: skeleton, labeled capsule skin, postures.

A character is an 18-joint skeleton dressed in labeled capsules (segment +
radius primitives). The 43-region body partition and the per-joint rotation
limits live in versioned data files under mvdp/data/. Postures come from two
procedural pools: a parametric gait cycle ("walk_run") and independent
per-joint sampling within limits ("general"). Posture ids form a fixed
universe of 100000; ids below 10000 are the gait subset, and the id modulo 10
assigns train (0-7) / validation (8) / test (9) membership, which keeps the
splits' postures disjoint.

World frame: +y up, character facing +z at rest, +x toward the character's
own left. The root joint sits at the origin of the character frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .geometry import rotation_about_axis

NUM_PARTS = 43
POSTURE_UNIVERSE = 100_000
WALK_POOL_SIZE = 10_000

_DATA_DIR = Path(__file__).parent / "data"
_POSTURE_STREAM = 0x9E11AC
_CHARACTER_STREAM = 0xC4A57E

SPLIT_RESIDUES = {"train": tuple(range(8)), "validation": (8,), "test": (9,)}

STAGES = ("easy", "inter", "hard")
HARD_POOL_SIZE = 16


class JointCountMismatch(ValueError):
    """Posture and skeleton disagree on the number of joints."""


@dataclass(frozen=True)
class Skeleton:
    """Joint tree in topological order (parent index < child index).

    ``offsets[j]`` is joint j's rest position relative to its parent;
    ``limits[j]`` holds (lo, hi) bounds per axis-angle component.
    """

    names: tuple[str, ...]
    parents: np.ndarray
    offsets: np.ndarray
    limits: np.ndarray

    def __post_init__(self):
        j = len(self.names)
        if self.parents[0] != -1:
            raise ValueError("joint 0 must be the root")
        for i in range(1, j):
            if not 0 <= self.parents[i] < i:
                raise ValueError(f"joint {i} breaks topological parent order")
            if np.linalg.norm(self.offsets[i]) == 0.0:
                raise ValueError(f"non-root joint {self.names[i]} has zero offset")

    @property
    def num_joints(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class CapsuleSpec:
    """One labeled skin capsule, attached to the bone ending at ``bone``.

    The axis runs from parent(bone) to bone, parameterized by t in
    [t0, t1] (t may leave [0, 1]); ``lateral`` offsets the axis along the
    bone frame's local x.
    """

    label: int
    name: str
    side: str
    bone: int
    t0: float
    t1: float
    lateral: float
    radius: float


@dataclass(frozen=True)
class Character:
    """Skeleton plus capsule skin and per-limb-group shape multipliers."""

    skeleton: Skeleton
    capsules: tuple[CapsuleSpec, ...]
    shape_scale: tuple[tuple[str, float], ...]  # limb group -> multiplier
    clothing_factor: float
    character_id: int

    def joint_scales(self) -> np.ndarray:
        scale = np.ones(self.skeleton.num_joints)
        groups = dict(self.shape_scale)
        for j, name in enumerate(self.skeleton.names):
            group = _limb_group(name)
            if group in groups:
                scale[j] = groups[group]
        return scale


@dataclass(frozen=True)
class Posture:
    """Per-joint axis-angle rotation parameters, radians."""

    rotations: np.ndarray  # (J, 3)
    posture_id: int
    tag: str


@dataclass(frozen=True)
class PosedGeometry:
    """World-space capsules of a posed character plus groundtruth joints."""

    labels: np.ndarray     # (M,) uint8 part label per capsule
    seg_a: np.ndarray      # (M, 3) capsule endpoints, meters
    seg_b: np.ndarray      # (M, 3)
    radius: np.ndarray     # (M,) skin radius, meters
    joint_positions: np.ndarray  # (J, 3)


def _limb_group(joint_name: str) -> str:
    if joint_name in ("spine_mid", "chest"):
        return "torso"
    if joint_name == "head":
        return "head"
    if joint_name.rsplit("_", 1)[0] in ("shoulder", "elbow", "wrist"):
        return "arms"
    if joint_name.rsplit("_", 1)[0] in ("hip", "knee", "ankle", "foot"):
        return "legs"
    return "root"


LIMB_GROUPS = ("torso", "head", "arms", "legs")

# name, parent name, rest offset (meters). The head bone (chest -> head)
# spans the neck; hands ride past the wrist on the forearm axis, so 18
# joints cover the full body.
_JOINT_TABLE = (
    ("root", None, (0.0, 0.0, 0.0)),
    ("spine_mid", "root", (0.0, 0.16, 0.0)),
    ("chest", "spine_mid", (0.0, 0.17, 0.0)),
    ("head", "chest", (0.0, 0.27, 0.0)),
    ("shoulder_l", "chest", (0.19, 0.04, 0.0)),
    ("elbow_l", "shoulder_l", (0.29, 0.0, 0.0)),
    ("wrist_l", "elbow_l", (0.26, 0.0, 0.0)),
    ("hip_l", "root", (0.095, -0.07, 0.0)),
    ("knee_l", "hip_l", (0.0, -0.44, 0.0)),
    ("ankle_l", "knee_l", (0.0, -0.43, 0.0)),
    ("foot_l", "ankle_l", (0.0, -0.06, 0.15)),
    ("shoulder_r", "chest", (-0.19, 0.04, 0.0)),
    ("elbow_r", "shoulder_r", (-0.29, 0.0, 0.0)),
    ("wrist_r", "elbow_r", (-0.26, 0.0, 0.0)),
    ("hip_r", "root", (-0.095, -0.07, 0.0)),
    ("knee_r", "hip_r", (0.0, -0.44, 0.0)),
    ("ankle_r", "knee_r", (0.0, -0.43, 0.0)),
    ("foot_r", "ankle_r", (0.0, -0.06, 0.15)),
)


def _read_table(path: Path) -> list[list[str]]:
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            rows.append(line.split("\t"))
    return rows


@lru_cache(maxsize=1)
def load_joint_limits() -> dict[str, np.ndarray]:
    limits = {}
    for row in _read_table(_DATA_DIR / "joint_limits.tsv"):
        name, *vals = row
        lo_hi = np.array([float(v) for v in vals], dtype=np.float64).reshape(3, 2)
        if np.any(lo_hi[:, 0] > lo_hi[:, 1]):
            raise ValueError(f"joint_limits.tsv: lo > hi for {name}")
        limits[name] = lo_hi
    return limits


@lru_cache(maxsize=1)
def default_skeleton() -> Skeleton:
    limits_by_name = load_joint_limits()
    names = tuple(row[0] for row in _JOINT_TABLE)
    parents = np.array([-1 if row[1] is None else names.index(row[1])
                        for row in _JOINT_TABLE], dtype=np.int64)
    offsets = np.array([row[2] for row in _JOINT_TABLE], dtype=np.float64)
    missing = set(names) - set(limits_by_name)
    if missing:
        raise ValueError(f"joint_limits.tsv misses joints: {sorted(missing)}")
    limits = np.stack([limits_by_name[n] for n in names])
    return Skeleton(names, parents, offsets, limits)


@lru_cache(maxsize=1)
def load_part_capsules() -> tuple[CapsuleSpec, ...]:
    skeleton = default_skeleton()
    specs = []
    for row in _read_table(_DATA_DIR / "part_labels.tsv"):
        label, name, side, bone, t0, t1, lateral, radius = row
        specs.append(CapsuleSpec(
            label=int(label), name=name, side=side, bone=skeleton.index(bone),
            t0=float(t0), t1=float(t1), lateral=float(lateral),
            radius=float(radius),
        ))
    labels = sorted(s.label for s in specs)
    if labels != list(range(1, NUM_PARTS + 1)):
        raise ValueError("part_labels.tsv must cover labels 1..43 exactly")
    for s in specs:
        if not 0.02 <= s.radius <= 0.25:
            raise ValueError(f"capsule radius out of range for {s.name}")
    left = {s.label for s in specs if s.side == "L"}
    right = {s.label for s in specs if s.side == "R"}
    if left & right or len(left) != len(right):
        raise ValueError("left/right label sets must be disjoint and equal-sized")
    return tuple(specs)


def left_right_labels() -> tuple[set[int], set[int]]:
    specs = load_part_capsules()
    return ({s.label for s in specs if s.side == "L"},
            {s.label for s in specs if s.side == "R"})


def _fk_full(skeleton: Skeleton, posture: Posture, joint_scales=None):
    rot = np.asarray(posture.rotations, dtype=np.float64)
    if rot.shape != (skeleton.num_joints, 3):
        raise JointCountMismatch(
            f"posture has shape {rot.shape}, skeleton expects "
            f"({skeleton.num_joints}, 3)")
    scales = np.ones(skeleton.num_joints) if joint_scales is None else joint_scales
    j = skeleton.num_joints
    positions = np.zeros((j, 3))
    global_rot = np.empty((j, 3, 3))
    for i in range(j):
        local = rotation_about_axis(rot[i])
        p = skeleton.parents[i]
        if p < 0:
            global_rot[i] = local
        else:
            positions[i] = positions[p] + global_rot[p] @ (scales[i] * skeleton.offsets[i])
            global_rot[i] = global_rot[p] @ local
    return positions, global_rot


def forward_kinematics(skeleton: Skeleton, posture: Posture, joint_scales=None) -> np.ndarray:
    """Joint positions (J, 3) in the character frame; root at the origin."""
    return _fk_full(skeleton, posture, joint_scales)[0]


def identity_posture(skeleton: Skeleton, posture_id: int = -1) -> Posture:
    return Posture(np.zeros((skeleton.num_joints, 3)), posture_id, "rest")


def rest_joint_positions(skeleton: Skeleton, joint_scales=None) -> np.ndarray:
    return forward_kinematics(skeleton, identity_posture(skeleton), joint_scales)


def pose_character(character: Character, posture: Posture) -> PosedGeometry:
    """Rigidly attach the character's capsules to the posed bone frames."""
    skeleton = character.skeleton
    scales = character.joint_scales()
    positions, global_rot = _fk_full(skeleton, posture, scales)
    rest = rest_joint_positions(skeleton, scales)

    m = len(character.capsules)
    labels = np.empty(m, dtype=np.uint8)
    seg_a = np.empty((m, 3))
    seg_b = np.empty((m, 3))
    radius = np.empty(m)
    x_local = np.array([1.0, 0.0, 0.0])
    for i, cap in enumerate(character.capsules):
        c = cap.bone
        p = skeleton.parents[c]
        axis = rest[c] - rest[p]
        lateral = cap.lateral * scales[c] * x_local
        e0 = rest[p] + cap.t0 * axis + lateral
        e1 = rest[p] + cap.t1 * axis + lateral
        seg_a[i] = positions[p] + global_rot[p] @ (e0 - rest[p])
        seg_b[i] = positions[p] + global_rot[p] @ (e1 - rest[p])
        labels[i] = cap.label
        radius[i] = np.clip(cap.radius * scales[c], 0.02, 0.25)
    return PosedGeometry(labels, seg_a, seg_b, radius, positions)


# ---------------------------------------------------------------------------
# posture sampling


@dataclass(frozen=True)
class PosturePoolSpec:
    tag: str  # "walk_run" | "general"
    skeleton: Skeleton

    def __post_init__(self):
        if self.tag not in ("walk_run", "general"):
            raise ValueError(f"unknown posture pool tag {self.tag!r}")


def gait_rotations(skeleton: Skeleton, phase: float, style: dict) -> np.ndarray:
    """Axis-angle parameters of a parametric walk/run cycle at ``phase``.

    ``style`` fields: vigor in [0, 1] (walk to run), heading (root yaw).
    Pure in its inputs so a sequence renderer can advance the phase smoothly.
    """
    rot = np.zeros((skeleton.num_joints, 3))
    idx = skeleton.index
    vigor = style["vigor"]
    swing = math.sin(phase)
    a_leg = 0.45 + 0.40 * vigor
    a_knee = 0.55 + 0.70 * vigor
    a_arm = 0.30 + 0.40 * vigor

    rot[idx("root"), 1] = style["heading"]
    rot[idx("root"), 0] = 0.03 * math.sin(2 * phase)
    rot[idx("spine_mid"), 0] = -0.05 - 0.12 * vigor + 0.03 * math.sin(2 * phase)
    rot[idx("chest"), 1] = 0.10 * swing
    rot[idx("head"), 0] = 0.05 + 0.03 * math.sin(2 * phase)

    for side, sign in (("l", 1.0), ("r", -1.0)):
        leg_phase = phase if side == "l" else phase + math.pi
        leg_swing = math.sin(leg_phase)
        rot[idx(f"hip_{side}"), 0] = -0.15 * vigor - a_leg * leg_swing
        rot[idx(f"knee_{side}"), 0] = 0.08 + a_knee * max(0.0, math.sin(leg_phase + 0.55))
        rot[idx(f"ankle_{side}"), 0] = 0.20 * math.sin(leg_phase - 0.4)
        rot[idx(f"shoulder_{side}"), 0] = a_arm * leg_swing
        rot[idx(f"elbow_{side}"), 1] = -sign * (0.25 + 0.55 * vigor) \
            * (0.6 + 0.4 * math.sin(leg_phase + 0.8))
    return rot


def clip_to_limits(rotations: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    return np.clip(rotations, skeleton.limits[:, :, 0], skeleton.limits[:, :, 1])


def sample_posture(pool_spec: PosturePoolSpec, seed, posture_id: int = -1) -> Posture:
    """Deterministic posture for a seed; the seed fully determines the draw."""
    rng = np.random.default_rng(seed)
    skeleton = pool_spec.skeleton
    if pool_spec.tag == "walk_run":
        phase = rng.uniform(0.0, 2.0 * math.pi)
        style = {"vigor": rng.uniform(0.0, 1.0),
                 "heading": rng.uniform(-math.pi, math.pi)}
        rot = gait_rotations(skeleton, phase, style)
        rot = rot + rng.normal(0.0, 0.03, size=rot.shape)
        rot = clip_to_limits(rot, skeleton)
    else:
        lo = skeleton.limits[:, :, 0]
        hi = skeleton.limits[:, :, 1]
        rot = rng.uniform(lo, hi)
    return Posture(rot, posture_id, pool_spec.tag)


@dataclass(frozen=True)
class PosturePool:
    """Id-addressed procedural posture pool (stage/split views share it)."""

    ids: np.ndarray
    skeleton: Skeleton

    def __post_init__(self):
        if len(self.ids) == 0:
            raise ValueError("empty posture pool")

    @staticmethod
    def for_stage(stage: str, split: str | None = None, skeleton: Skeleton | None = None) -> "PosturePool":
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        skeleton = skeleton or default_skeleton()
        universe = WALK_POOL_SIZE if stage == "easy" else POSTURE_UNIVERSE
        ids = np.arange(universe, dtype=np.int64)
        if split is not None:
            if split not in SPLIT_RESIDUES:
                raise ValueError(f"unknown split {split!r}")
            ids = ids[np.isin(ids % 10, SPLIT_RESIDUES[split])]
        return PosturePool(ids, skeleton)

    def posture(self, posture_id: int) -> Posture:
        tag = "walk_run" if posture_id < WALK_POOL_SIZE else "general"
        seed = np.random.SeedSequence((_POSTURE_STREAM, int(posture_id)))
        return sample_posture(PosturePoolSpec(tag, self.skeleton), seed,
                              posture_id=int(posture_id))

    def draw(self, rng: np.random.Generator) -> Posture:
        return self.posture(int(self.ids[rng.integers(len(self.ids))]))


def make_gait_sequence(n_frames: int, phase_step: float, seed,
                       skeleton: Skeleton | None = None) -> list[Posture]:
    """Temporally coherent walk cycle: one style, phase advancing per frame.

    Jitter noise is drawn independently per frame on top of the smooth cycle,
    mimicking per-frame sampling variation.
    """
    skeleton = skeleton or default_skeleton()
    rng = np.random.default_rng(seed)
    style = {"vigor": rng.uniform(0.0, 1.0),
             "heading": rng.uniform(-math.pi, math.pi)}
    phase0 = rng.uniform(0.0, 2.0 * math.pi)
    postures = []
    for k in range(n_frames):
        rot = gait_rotations(skeleton, phase0 + k * phase_step, style)
        rot = rot + rng.normal(0.0, 0.01, size=rot.shape)
        postures.append(Posture(clip_to_limits(rot, skeleton), k, "walk_run"))
    return postures


# ---------------------------------------------------------------------------
# character pools


def canonical_character(character_id: int = 0, clothing_factor: float = 1.05) -> Character:
    scale = tuple((g, 1.0) for g in LIMB_GROUPS)
    return Character(default_skeleton(), load_part_capsules(), scale,
                     clothing_factor, character_id)


def build_character_pool(stage: str, seed: int) -> list[Character]:
    """Curriculum character pools: 1 canonical body for easy/inter, 16 shape
    variations for hard."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    if stage in ("easy", "inter"):
        return [canonical_character()]
    rng = np.random.default_rng(np.random.SeedSequence((_CHARACTER_STREAM, int(seed))))
    pool = []
    for i in range(HARD_POOL_SIZE):
        scale = tuple((g, float(rng.uniform(0.85, 1.20))) for g in LIMB_GROUPS)
        clothing = float(rng.uniform(1.0, 1.1))
        pool.append(Character(default_skeleton(), load_part_capsules(),
                              scale, clothing, i))
    return pool
