"""Synthetic multi-camera capture of capsule-body humans.

Generates randomized standing skeletons, wraps them in capsules, samples
camera-facing surface points with sensor noise, applies camera dropout, and
writes datasets in the package's cloud/annotation/manifest formats. The
geometry is deliberately simple so membership and coverage oracles stay
exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pointcloud import FrameManifest, PointCloud, Workspace, write_cloud
from .targets import CMU_JOINTS, Skeleton, write_annotation

DEFAULT_SIGMA = 0.01
DEFAULT_CAMERA_BUDGET = 1500
DEFAULT_CAMERA_HEIGHT = 1.8
PLACEMENT_MARGIN = 0.5   # keep axes this far from workspace walls
MIN_SPACING = 0.5        # pairwise neck-axis distance
MAX_PLACEMENT_TRIES = 1000

# capsule radii per segment; segments are shrunk inward by their radius at
# both ends so the surface stays inside the joint hull
BODY_SEGMENTS = (
    ("Neck", "BodyCenter", 0.10),
    ("Neck", "Headtop", 0.07),
    ("Neck", "Lshoulder", 0.055),
    ("Neck", "Rshoulder", 0.055),
    ("BodyCenter", "Lhip", 0.06),
    ("BodyCenter", "Rhip", 0.06),
    ("Lhip", "Lknee", 0.05),
    ("Lknee", "Lankle", 0.045),
    ("Rhip", "Rknee", 0.05),
    ("Rknee", "Rankle", 0.045),
)


@dataclass
class Capsule:
    """Segment p0-p1 swept by a sphere of the given radius."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def area(self) -> float:
        return float(2 * np.pi * self.radius * self.length + 4 * np.pi * self.radius ** 2)

    def distance_to_segment(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.asarray(xyz, np.float64).reshape(-1, 3)
        d = self.p1 - self.p0
        denom = float(d @ d)
        if denom == 0.0:
            return np.linalg.norm(xyz - self.p0, axis=1)
        t = np.clip((xyz - self.p0) @ d / denom, 0.0, 1.0)
        nearest = self.p0 + t[:, None] * d
        return np.linalg.norm(xyz - nearest, axis=1)


@dataclass
class SyntheticPerson:
    skeleton: Skeleton
    capsules: list


@dataclass
class VirtualCamera:
    position: np.ndarray
    look_at: np.ndarray
    budget: int = DEFAULT_CAMERA_BUDGET
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        self.position = np.asarray(self.position, np.float64)
        self.look_at = np.asarray(self.look_at, np.float64)
        if self.budget <= 0:
            raise ValueError("camera point budget must be positive")


def _sample_skeleton(rng, axis_x: float, axis_z: float, ground_y: float) -> Skeleton:
    """Randomized standing pose around a vertical neck axis.

    Shoulders are the widest joints by construction, so the bounding
    cylinder radius comes from them and the capsule surface stays inside.
    """
    h = rng.uniform(1.55, 1.9)
    heading = rng.uniform(0.0, 2 * np.pi)
    side = np.array([np.cos(heading), 0.0, np.sin(heading)])
    shoulder_half = rng.uniform(0.18, 0.24)
    hip_half = rng.uniform(0.06, 0.10)
    axis = np.array([axis_x, 0.0, axis_z])

    def at(y, offset=0.0, jitter=0.0):
        p = axis + offset * side
        if jitter:
            p = p + np.array([rng.uniform(-jitter, jitter), 0.0, rng.uniform(-jitter, jitter)])
        p[1] = ground_y + y
        return p

    joints = {
        "Neck": at(0.85 * h),
        "Headtop": at(h),
        "BodyCenter": at(0.55 * h, jitter=0.01),
        "Lshoulder": at(0.82 * h, +shoulder_half),
        "Rshoulder": at(0.82 * h, -shoulder_half),
        "Lhip": at(0.52 * h, +hip_half),
        "Rhip": at(0.52 * h, -hip_half),
        "Lknee": at(0.28 * h, +hip_half, jitter=0.025),
        "Rknee": at(0.28 * h, -hip_half, jitter=0.025),
        "Lankle": at(0.05 * h, +hip_half, jitter=0.025),
        "Rankle": at(0.05 * h, -hip_half, jitter=0.025),
    }
    return Skeleton(person_id=-1, joints=joints)


def _build_capsules(skeleton: Skeleton) -> list:
    caps = []
    for a, b, r in BODY_SEGMENTS:
        p0 = np.asarray(skeleton.joints[a], np.float64)
        p1 = np.asarray(skeleton.joints[b], np.float64)
        d = p1 - p0
        length = np.linalg.norm(d)
        if length > 2 * r:
            u = d / length
            caps.append(Capsule(p0 + r * u, p1 - r * u, r))
        else:
            mid = 0.5 * (p0 + p1)
            caps.append(Capsule(mid, mid.copy(), r))  # degenerate: sphere
    return caps


def generate_scene(rng, n_persons: int, ws: Workspace) -> list:
    """Place persons with rejection sampling: margins from the walls,
    pairwise neck-axis spacing >= 0.5 m."""
    if n_persons < 0:
        raise ValueError("n_persons must be >= 0")
    o = np.asarray(ws.origin, np.float64)
    ext = ws.extent
    lo = (o[0] + PLACEMENT_MARGIN, o[2] + PLACEMENT_MARGIN)
    hi = (o[0] + ext[0] - PLACEMENT_MARGIN, o[2] + ext[2] - PLACEMENT_MARGIN)
    if n_persons and (lo[0] >= hi[0] or lo[1] >= hi[1]):
        raise ValueError("workspace too small for person placement margins")
    placed = []
    persons = []
    for pid in range(n_persons):
        for attempt in range(MAX_PLACEMENT_TRIES):
            x = rng.uniform(lo[0], hi[0])
            z = rng.uniform(lo[1], hi[1])
            if all(np.hypot(x - px, z - pz) >= MIN_SPACING for px, pz in placed):
                break
        else:
            raise RuntimeError(f"could not place person {pid} after {MAX_PLACEMENT_TRIES} tries")
        placed.append((x, z))
        skel = _sample_skeleton(rng, x, z, ws.ground_y)
        skel.person_id = pid
        persons.append(SyntheticPerson(skeleton=skel, capsules=_build_capsules(skel)))
    return persons


def _perp_frame(u: np.ndarray):
    helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    n1 = np.cross(u, helper)
    n1 /= np.linalg.norm(n1)
    return n1, np.cross(u, n1)


def render_camera(scene, cam: VirtualCamera, rng) -> PointCloud:
    """Sample camera-facing capsule surface points with Gaussian noise.

    Candidates are drawn area-weighted over all capsules, kept when the
    surface normal faces the camera, until the budget is filled.
    """
    capsules = [c for person in scene for c in person.capsules]
    if not capsules:
        return PointCloud()
    areas = np.array([c.area for c in capsules])
    weights = areas / areas.sum()
    kept = []
    n_kept = 0
    for _ in range(40):  # each round keeps ~half its candidates
        n_draw = max(64, 2 * (cam.budget - n_kept))
        ci = rng.choice(len(capsules), size=n_draw, p=weights)
        pts = np.empty((n_draw, 3))
        normals = np.empty((n_draw, 3))
        for k in np.unique(ci):
            c = capsules[k]
            sel = np.flatnonzero(ci == k)
            m = len(sel)
            side_area = 2 * np.pi * c.radius * c.length
            on_side = rng.uniform(size=m) < side_area / c.area
            # cylindrical side
            n_side = int(on_side.sum())
            if n_side:
                u = (c.p1 - c.p0) / c.length
                n1, n2 = _perp_frame(u)
                t = rng.uniform(size=n_side)[:, None]
                ang = rng.uniform(0, 2 * np.pi, n_side)[:, None]
                radial = np.cos(ang) * n1 + np.sin(ang) * n2
                pts[sel[on_side]] = c.p0 + t * (c.p1 - c.p0) + c.radius * radial
                normals[sel[on_side]] = radial
            # spherical caps: uniform directions, attached to the facing end
            n_cap = m - n_side
            if n_cap:
                d = rng.normal(size=(n_cap, 3))
                d /= np.linalg.norm(d, axis=1, keepdims=True)
                if c.length > 0:
                    u = (c.p1 - c.p0) / c.length
                    ends = np.where((d @ u > 0)[:, None], c.p1, c.p0)
                else:
                    ends = np.broadcast_to(c.p0, (n_cap, 3))
                pts[sel[~on_side]] = ends + c.radius * d
                normals[sel[~on_side]] = d
        facing = np.einsum("ij,ij->i", normals, cam.position - pts) > 0
        kept.append(pts[facing])
        n_kept += int(facing.sum())
        if n_kept >= cam.budget:
            break
    xyz = np.concatenate(kept)[:cam.budget]
    if cam.sigma > 0:
        xyz = xyz + rng.normal(0.0, cam.sigma, xyz.shape)
    return PointCloud(xyz.astype(np.float32))


def apply_dropout(clouds, p: float, rng):
    """Drop each sensor's cloud independently with probability p; when a draw
    drops everything, one uniformly chosen sensor is kept instead."""
    clouds = list(clouds)
    if not clouds:
        return []
    keep = rng.uniform(size=len(clouds)) >= p
    if not keep.any():
        keep[rng.integers(len(clouds))] = True
    return [c for c, k in zip(clouds, keep) if k]


def default_cameras(ws: Workspace, n_cameras: int = 4, budget: int = DEFAULT_CAMERA_BUDGET,
                    sigma: float = DEFAULT_SIGMA) -> list:
    """Cameras at the workspace corners (4) or on a perimeter ring, at 1.8 m,
    aimed at the workspace center."""
    if n_cameras < 1:
        raise ValueError("need at least one camera")
    o = np.asarray(ws.origin, np.float64)
    ext = ws.extent
    center = o + 0.5 * ext
    center[1] = o[1] + 0.9
    y = o[1] + DEFAULT_CAMERA_HEIGHT
    if n_cameras == 4:
        corners = [(o[0], o[2]), (o[0] + ext[0], o[2]),
                   (o[0], o[2] + ext[2]), (o[0] + ext[0], o[2] + ext[2])]
        positions = [np.array([cx, y, cz]) for cx, cz in corners]
    else:
        ang = 2 * np.pi * (np.arange(n_cameras) + 0.5) / n_cameras
        positions = [np.array([center[0] + 0.5 * ext[0] * np.cos(a), y,
                               center[2] + 0.5 * ext[2] * np.sin(a)]) for a in ang]
    return [VirtualCamera(p, center, budget, sigma) for p in positions]


# ---------------------------------------------------------------------------
# dataset files


DATASET_MANIFEST = "manifest.json"


def generate_dataset(out_dir, n_frames: int, persons_range, cameras, dropout_p: float,
                     seed: int, ws: Workspace, joint_names=CMU_JOINTS) -> dict:
    """Write a full synthetic dataset; returns the manifest document.

    Per-frame RNG streams derive from (seed, frame index), so regeneration
    with the same arguments is byte-identical. Dropout here removes sensor
    files from the frame entirely (hard failures); training-time dropout is
    a separate augmentation.
    """
    lo, hi = persons_range
    if not 0 <= lo <= hi:
        raise ValueError(f"invalid persons range {lo}..{hi}")
    cams = cameras if isinstance(cameras, (list, tuple)) else default_cameras(ws, cameras)
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    frames = []
    stats = {"persons": 0, "points": 0}
    for fi in range(n_frames):
        rng = np.random.default_rng([seed, fi])
        frame_id = f"f{fi:04d}"
        fdir = out / "frames" / frame_id
        fdir.mkdir(exist_ok=True)
        scene = generate_scene(rng, int(rng.integers(lo, hi + 1)), ws)
        clouds = [render_camera(scene, cam, rng) for cam in cams]
        sensor_ids = list(range(len(cams)))
        if dropout_p > 0:
            keep = rng.uniform(size=len(clouds)) >= dropout_p
            if not keep.any():
                keep[rng.integers(len(clouds))] = True
            clouds = [c for c, k in zip(clouds, keep) if k]
            sensor_ids = [s for s, k in zip(sensor_ids, keep) if k]
        sensors = []
        for sid, cloud in zip(sensor_ids, clouds):
            rel = f"frames/{frame_id}/cam{sid}.prc"
            write_cloud(out / rel, cloud)
            sensors.append((sid, rel))
            stats["points"] += len(cloud)
        ann_rel = f"frames/{frame_id}/annotation.json"
        write_annotation(out / ann_rel, [p.skeleton for p in scene], joint_names)
        stats["persons"] += len(scene)
        frames.append(FrameManifest(frame_id, sensors, ann_rel))
        # standalone per-frame manifest with frame-local paths, so single
        # frames can be fed to inference without the dataset manifest
        local = FrameManifest(frame_id,
                              [(sid, Path(rel).name) for sid, rel in sensors],
                              "annotation.json")
        with open(fdir / "frame.json", "w") as f:
            json.dump(local.to_dict(), f, indent=1)
    manifest = {
        "workspace": ws.to_dict(),
        "joint_names": list(joint_names),
        "n_cameras": len(cams),
        "frames": [f.to_dict() for f in frames],
    }
    with open(out / DATASET_MANIFEST, "w") as f:
        json.dump(manifest, f, indent=1)
    manifest["_stats"] = stats
    return manifest


def read_dataset_manifest(path) -> tuple:
    """Load a dataset manifest: (workspace, joint_names, frame manifests)."""
    with open(path) as f:
        doc = json.load(f)
    for key in ("workspace", "joint_names", "frames"):
        if key not in doc:
            raise ValueError(f"{path}: dataset manifest missing '{key}'")
    ws = Workspace.from_dict(doc["workspace"])
    joints = [str(j) for j in doc["joint_names"]]
    frames = [FrameManifest.from_dict(d) for d in doc["frames"]]
    return ws, joints, frames
