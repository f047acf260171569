"""Ground-truth construction: skeletons to bounding cylinders, voxel labels,
normalized regression targets, and the balanced voxel sampling used by the
detection loss.

Cylinders are vertical, bottom pinned to the workspace ground plane, so four
parameters describe one: axis (x, z), top height, radius.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .pointcloud import Workspace
from .voxelizer import delinearize, linearize, voxel_center

# joint schemas: full-body capture set and the smaller upper-body OR set
CMU_JOINTS = ("Neck", "Headtop", "BodyCenter", "Lshoulder", "Lhip", "Lknee",
              "Lankle", "Rshoulder", "Rhip", "Rknee", "Rankle")
MVOR_JOINTS = ("Head", "Neck", "Lshoulder", "Rshoulder", "Lhip", "Rhip",
               "Lelb", "Relb")

R_REF = 0.3       # reference radius for the log-ratio encoding
MIN_RADIUS = 0.05  # degenerate-skeleton floor


@dataclass
class Skeleton:
    """Named joint positions for one person; absent joints are allowed."""

    person_id: int
    joints: dict = field(default_factory=dict)  # name -> (3,) array or None

    def present(self, name: str) -> bool:
        return self.joints.get(name) is not None

    def joint_matrix(self, names) -> tuple:
        """(J, 3) float32 positions and a (J,) presence mask; absent rows zero."""
        arr = np.zeros((len(names), 3), np.float32)
        mask = np.zeros(len(names), bool)
        for i, n in enumerate(names):
            p = self.joints.get(n)
            if p is not None:
                arr[i] = p
                mask[i] = True
        return arr, mask


@dataclass(frozen=True)
class Cylinder:
    """Vertical bounding cylinder; the axis is the line x=axis_x, z=axis_z."""

    axis_x: float
    axis_z: float
    top_y: float
    radius: float
    bottom_y: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("cylinder radius must be positive")
        if self.top_y <= self.bottom_y:
            raise ValueError("cylinder top must lie above its bottom")

    @property
    def height(self) -> float:
        return self.top_y - self.bottom_y

    @property
    def volume(self) -> float:
        return float(np.pi * self.radius ** 2 * self.height)

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside (half-open at the top, closed sides)."""
        xyz = np.asarray(xyz, np.float64).reshape(-1, 3)
        r2 = (xyz[:, 0] - self.axis_x) ** 2 + (xyz[:, 2] - self.axis_z) ** 2
        return (r2 <= self.radius ** 2) & (xyz[:, 1] >= self.bottom_y) & (xyz[:, 1] <= self.top_y)


def skeleton_to_cylinder(s: Skeleton, ground_y: float = 0.0) -> Cylinder:
    """Bound a skeleton: axis through the neck, top at the highest joint,
    radius reaching the joint furthest from the neck axis (floored)."""
    if not s.present("Neck"):
        raise ValueError(f"skeleton {s.person_id}: neck joint required for the cylinder axis")
    neck = np.asarray(s.joints["Neck"], np.float64)
    pts = np.array([p for p in s.joints.values() if p is not None], np.float64)
    top_y = float(pts[:, 1].max())
    horiz = np.hypot(pts[:, 0] - neck[0], pts[:, 2] - neck[2])
    radius = max(float(horiz.max()), MIN_RADIUS)
    return Cylinder(float(neck[0]), float(neck[2]), top_y, radius, bottom_y=ground_y)


@dataclass
class VoxelTargets:
    """Per-voxel detection supervision for one frame.

    labels: (N_v,) int64 in {0, 1}; reg: (4, N_v) float32, valid where
    label=1; owners: (N_v,) int64 index into the input cylinder list, -1
    where unlabeled.
    """

    labels: np.ndarray
    reg: np.ndarray
    owners: np.ndarray


def encode_cylinder(cyl: Cylinder, voxel_id: int, ws: Workspace) -> np.ndarray:
    """Normalized regression vector for a cylinder anchored at a voxel:
    ((ax-cx)/v_x, (az-cz)/v_z, (top-cy)/v_y, log(r/r_ref))."""
    cx, cy, cz = voxel_center(np.int64(voxel_id), ws)
    vx, vy, vz = ws.voxel_size
    return np.array([
        (cyl.axis_x - cx) / vx,
        (cyl.axis_z - cz) / vz,
        (cyl.top_y - cy) / vy,
        np.log(cyl.radius / R_REF),
    ], np.float64)


def decode_cylinder(voxel_id: int, reg4, ws: Workspace) -> Cylinder:
    """Exact inverse of encode_cylinder; bottom pinned to the workspace ground."""
    reg4 = np.asarray(reg4, np.float64)
    cx, cy, cz = voxel_center(np.int64(voxel_id), ws)
    vx, vy, vz = ws.voxel_size
    return Cylinder(
        axis_x=float(cx + reg4[0] * vx),
        axis_z=float(cz + reg4[1] * vz),
        top_y=float(cy + reg4[2] * vy),
        radius=float(R_REF * np.exp(reg4[3])),
        bottom_y=ws.ground_y,
    )


def assign_voxel_targets(cyls, ws: Workspace) -> VoxelTargets:
    """Label the voxel containing each cylinder's top point and store its
    normalized parameters. Tops outside the workspace are skipped with a
    warning; two tops in one voxel keep the larger-volume cylinder."""
    n_v = ws.num_voxels
    labels = np.zeros(n_v, np.int64)
    reg = np.zeros((4, n_v), np.float32)
    owners = np.full(n_v, -1, np.int64)
    o = np.asarray(ws.origin, np.float64)
    v = np.asarray(ws.voxel_size, np.float64)
    n = np.asarray(ws.counts, np.int64)
    for i, cyl in enumerate(cyls):
        top = np.array([cyl.axis_x, cyl.top_y, cyl.axis_z], np.float64)
        idx = np.floor((top - o) / v).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= n):
            warnings.warn(f"cylinder {i}: top point {tuple(top)} outside workspace, skipped")
            continue
        lid = int(linearize(idx, ws))
        if labels[lid]:
            other = owners[lid]
            if cyl.volume <= cyls[other].volume:
                warnings.warn(f"cylinder {i}: top voxel {lid} already taken by a larger cylinder")
                continue
            warnings.warn(f"cylinder {other}: top voxel {lid} reassigned to a larger cylinder")
        labels[lid] = 1
        owners[lid] = i
        reg[:, lid] = encode_cylinder(cyl, lid, ws)
    return VoxelTargets(labels, reg, owners)


def sample_training_voxels(labels: np.ndarray, occupied: np.ndarray, rng) -> np.ndarray:
    """Balanced loss sample over flattened batch voxels.

    With P = number of positives: all P positives, P randomly chosen
    point-occupied voxels, and P randomly chosen voxels from the whole
    batch, deduplicated. P = 0 falls back to 32 random voxels.
    """
    labels = np.asarray(labels).reshape(-1)
    occupied = np.asarray(occupied, bool).reshape(-1)
    if len(labels) != len(occupied):
        raise ValueError("labels and occupancy must cover the same voxels")
    total = len(labels)
    positives = np.flatnonzero(labels == 1)
    p = len(positives)
    if p == 0:
        k = min(32, total)
        return np.sort(rng.choice(total, size=k, replace=False))
    occ_pool = np.flatnonzero(occupied)
    picks = [positives]
    if len(occ_pool):
        picks.append(rng.choice(occ_pool, size=min(p, len(occ_pool)), replace=False))
    picks.append(rng.choice(total, size=min(p, total), replace=False))
    return np.unique(np.concatenate(picks))


# ---------------------------------------------------------------------------
# annotation files


def write_annotation(path, skeletons, joint_names=CMU_JOINTS) -> None:
    """JSON: {persons: [{id, joints: {name: [x,y,z] | null}}]}."""
    persons = []
    for s in skeletons:
        joints = {}
        for name in joint_names:
            p = s.joints.get(name)
            joints[name] = None if p is None else [float(c) for c in np.asarray(p)]
        persons.append({"id": int(s.person_id), "joints": joints})
    with open(path, "w") as f:
        json.dump({"persons": persons}, f, indent=1)


def read_annotation(path) -> list:
    with open(path) as f:
        doc = json.load(f)
    if "persons" not in doc:
        raise ValueError(f"{path}: annotation file missing 'persons'")
    skeletons = []
    for entry in doc["persons"]:
        joints = {}
        for name, p in entry["joints"].items():
            joints[name] = None if p is None else np.asarray(p, np.float64)
        skeletons.append(Skeleton(person_id=int(entry["id"]), joints=joints))
    return skeletons
