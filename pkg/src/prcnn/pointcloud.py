"""Point-cloud ingestion, multi-sensor fusion, cropping and grid downsampling.

Clouds live in a shared world frame with the y-axis as ground normal;
registration is the caller's responsibility. Coordinates are stored as
float32 (the on-disk precision); centroid math runs in float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CLOUD_MAGIC = b"PRC1"


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned cuboid working volume partitioned into a regular voxel grid.

    origin: lower corner (meters), voxel_size: per-axis cell edge (meters),
    counts: number of cells per axis. Cells are half-open [lo, hi) boxes.
    """

    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    voxel_size: tuple[float, float, float] = (0.25, 0.25, 0.25)
    counts: tuple[int, int, int] = (16, 8, 12)

    def __post_init__(self):
        if any(v <= 0 for v in self.voxel_size):
            raise ValueError("voxel_size must be positive")
        if any(n <= 0 for n in self.counts):
            raise ValueError("grid counts must be positive")

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.counts, np.float64) * np.asarray(self.voxel_size, np.float64)

    @property
    def num_voxels(self) -> int:
        nx, ny, nz = self.counts
        return nx * ny * nz

    @property
    def ground_y(self) -> float:
        return self.origin[1]

    def to_dict(self) -> dict:
        return {
            "origin": list(self.origin),
            "voxel_size": list(self.voxel_size),
            "counts": list(self.counts),
        }

    @staticmethod
    def from_dict(d: dict) -> "Workspace":
        return Workspace(
            origin=tuple(float(v) for v in d["origin"]),
            voxel_size=tuple(float(v) for v in d["voxel_size"]),
            counts=tuple(int(v) for v in d["counts"]),
        )


@dataclass
class PointCloud:
    """Unordered set of 3D world points, optionally tagged by source sensor.

    xyz: (N, 3) float32. sensor_id: (N,) int32 or None. Point order carries
    no semantics.
    """

    xyz: np.ndarray = field(default_factory=lambda: np.empty((0, 3), np.float32))
    sensor_id: np.ndarray | None = None

    def __post_init__(self):
        self.xyz = np.ascontiguousarray(self.xyz, dtype=np.float32).reshape(-1, 3)
        if not np.isfinite(self.xyz).all():
            raise ValueError("point coordinates must be finite")
        if self.sensor_id is not None:
            self.sensor_id = np.ascontiguousarray(self.sensor_id, dtype=np.int32).reshape(-1)
            if len(self.sensor_id) != len(self.xyz):
                raise ValueError("sensor_id length must match point count")

    def __len__(self) -> int:
        return len(self.xyz)


def fuse(clouds) -> PointCloud:
    """Concatenate registered clouds into one. Empty input fuses to an empty cloud."""
    clouds = list(clouds)
    if not clouds:
        return PointCloud()
    xyz = np.concatenate([c.xyz for c in clouds], axis=0)
    if all(c.sensor_id is not None for c in clouds):
        sid = np.concatenate([c.sensor_id for c in clouds], axis=0)
    else:
        sid = None
    return PointCloud(xyz, sid)


def _grid_indices(xyz: np.ndarray, ws: Workspace) -> np.ndarray:
    """Directional voxel indices floor((p - o) / v), computed in float64."""
    o = np.asarray(ws.origin, np.float64)
    v = np.asarray(ws.voxel_size, np.float64)
    return np.floor((xyz.astype(np.float64) - o) / v).astype(np.int64)


def crop_workspace(cloud: PointCloud, ws: Workspace) -> PointCloud:
    """Keep points inside the workspace: o <= p < o + extent per axis.

    The test is the voxel-index range test, so every retained point maps to
    a valid grid cell afterwards.
    """
    idx = _grid_indices(cloud.xyz, ws)
    n = np.asarray(ws.counts, np.int64)
    keep = np.all((idx >= 0) & (idx < n), axis=1)
    sid = cloud.sensor_id[keep] if cloud.sensor_id is not None else None
    return PointCloud(cloud.xyz[keep], sid)


def voxel_grid_filter(cloud: PointCloud, cell: float) -> PointCloud:
    """Downsample by replacing all points in each cell with their centroid.

    Cells are [k*cell, (k+1)*cell) boxes anchored at the world origin, so
    re-filtering a filtered cloud is a fixed point. Centroids accumulate in
    float64 and are stored back as float32. Sensor tags do not survive the
    merge.
    """
    if cell <= 0:
        raise ValueError("cell size must be positive")
    if len(cloud) == 0:
        return PointCloud()
    pts = cloud.xyz.astype(np.float64)
    idx = np.floor(pts / cell).astype(np.int64)  # (N, 3)
    uniq, inv = np.unique(idx, axis=0, return_inverse=True)
    sums = np.zeros((len(uniq), 3), np.float64)
    np.add.at(sums, inv, pts)
    counts = np.bincount(inv, minlength=len(uniq)).astype(np.float64)
    return PointCloud((sums / counts[:, None]).astype(np.float32))


def shuffle(cloud: PointCloud, seed: int) -> PointCloud:
    """Deterministic random permutation of the points."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(cloud))
    sid = cloud.sensor_id[perm] if cloud.sensor_id is not None else None
    return PointCloud(cloud.xyz[perm], sid)


# ---------------------------------------------------------------------------
# file formats


def write_cloud(path, cloud: PointCloud) -> None:
    """Write the binary cloud format: magic PRC1, u32 count, count*3 f32 LE."""
    xyz = np.ascontiguousarray(cloud.xyz, dtype="<f4")
    with open(path, "wb") as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack("<I", len(xyz)))
        f.write(xyz.tobytes())


def read_cloud(path, sensor_id: int | None = None) -> PointCloud:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CLOUD_MAGIC:
        raise ValueError(f"{path}: bad cloud magic {blob[:4]!r}")
    (count,) = struct.unpack("<I", blob[4:8])
    payload = blob[8:]
    if len(payload) != count * 12:
        raise ValueError(f"{path}: truncated cloud file ({len(payload)} payload bytes for {count} points)")
    xyz = np.frombuffer(payload, dtype="<f4").reshape(count, 3)
    sid = None if sensor_id is None else np.full(count, sensor_id, np.int32)
    return PointCloud(xyz.copy(), sid)


@dataclass
class FrameManifest:
    """One fused frame: per-sensor cloud files plus the annotation file."""

    frame_id: str
    sensors: list  # [(sensor_id, cloud_path)]
    annotation_path: str

    def to_dict(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "sensors": [{"sensor_id": int(s), "cloud_path": str(p)} for s, p in self.sensors],
            "annotation_path": str(self.annotation_path),
        }

    @staticmethod
    def from_dict(d: dict) -> "FrameManifest":
        return FrameManifest(
            frame_id=str(d["frame_id"]),
            sensors=[(int(s["sensor_id"]), s["cloud_path"]) for s in d["sensors"]],
            annotation_path=d["annotation_path"],
        )


def read_frame_manifest(path) -> FrameManifest:
    with open(path) as f:
        return FrameManifest.from_dict(json.load(f))


def load_frame_clouds(manifest: FrameManifest, base_dir, drop_sensors=()) -> list[PointCloud]:
    """Read this frame's per-sensor clouds, tagged with their sensor ids.

    Paths are resolved relative to base_dir; sensors listed in drop_sensors
    are skipped (camera-failure simulation).
    """
    base = Path(base_dir)
    drop = set(int(s) for s in drop_sensors)
    clouds = []
    for sid, rel in manifest.sensors:
        if sid in drop:
            continue
        p = base / rel
        if not p.exists():
            raise FileNotFoundError(f"missing cloud file: {p}")
        clouds.append(read_cloud(p, sensor_id=sid))
    return clouds
