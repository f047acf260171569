"""Detection-grid voxelization: fixed point budget per voxel, relative coords.

Builds the (3, T, N_v) network input tensor. Coordinates are stored relative
to the corner of each point's voxel, unused slots stay exactly zero, and the
"first T points" selection is made deterministic by an explicit shuffle seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointcloud import PointCloud, Workspace, _grid_indices, shuffle


@dataclass(frozen=True)
class VoxelIndex:
    """Directional grid indices plus the flattened linear index."""

    id_x: int
    id_y: int
    id_z: int
    id: int


def assign_voxel_index(p, ws: Workspace) -> VoxelIndex:
    """Map a single in-workspace point to its voxel.

    id_ax = floor((p_ax - o_ax) / v_ax); linear id = id_z + id_y*N_z + id_x*N_z*N_y.
    Raises if the point lies outside the grid (crop must run first).
    """
    idx = _grid_indices(np.asarray(p, np.float64).reshape(1, 3), ws)[0]
    n = np.asarray(ws.counts, np.int64)
    if np.any(idx < 0) or np.any(idx >= n):
        raise ValueError(f"point {tuple(p)} outside workspace grid")
    return VoxelIndex(int(idx[0]), int(idx[1]), int(idx[2]), int(linearize(idx, ws)))


def linearize(idx, ws: Workspace) -> np.ndarray:
    """Flatten directional indices: id = id_z + id_y*N_z + id_x*N_z*N_y."""
    idx = np.asarray(idx, np.int64)
    _, ny, nz = ws.counts
    return idx[..., 2] + idx[..., 1] * nz + idx[..., 0] * nz * ny


def delinearize(ids, ws: Workspace) -> np.ndarray:
    """Inverse of linearize: (..., 3) directional indices."""
    ids = np.asarray(ids, np.int64)
    _, ny, nz = ws.counts
    id_z = ids % nz
    id_y = (ids // nz) % ny
    id_x = ids // (nz * ny)
    return np.stack([id_x, id_y, id_z], axis=-1)


def voxel_corner(idx, ws: Workspace) -> np.ndarray:
    """World coordinates of the low corner of the voxel at directional index idx."""
    o = np.asarray(ws.origin, np.float64)
    v = np.asarray(ws.voxel_size, np.float64)
    return o + np.asarray(idx, np.float64) * v


def voxel_center(ids, ws: Workspace) -> np.ndarray:
    """World coordinates of voxel centers for linear ids (..., 3)."""
    v = np.asarray(ws.voxel_size, np.float64)
    return voxel_corner(delinearize(ids, ws), ws) + 0.5 * v


def relative_coordinates(p, idx: VoxelIndex, ws: Workspace) -> np.ndarray:
    """Position of p relative to its voxel corner; each component in [0, v_ax)."""
    corner = voxel_corner([idx.id_x, idx.id_y, idx.id_z], ws)
    return np.asarray(p, np.float64) - corner


@dataclass
class VoxelizedFrame:
    """Fixed-budget voxel tensor for one fused, cropped, shuffled frame.

    tensor: (3, T, N_v) float32 voxel-relative coordinates; slots at or past
    count_per_voxel[v] along the T axis are exactly zero.
    occupied_ids: sorted linear ids of non-empty voxels.
    """

    tensor: np.ndarray
    count_per_voxel: np.ndarray
    occupied_ids: np.ndarray
    workspace: Workspace
    t_budget: int

    @property
    def point_budget(self) -> int:
        return self.t_budget


def build_voxel_tensor(cloud: PointCloud, ws: Workspace, t_budget: int = 64,
                       seed: int = 0) -> VoxelizedFrame:
    """Group points by voxel and keep the first t_budget per voxel.

    The cloud is shuffled with the given seed first, so "first" is a
    reproducible random selection. Relative coordinates are computed against
    each voxel's corner; empty slots are zero.
    """
    if t_budget <= 0:
        raise ValueError("t_budget must be positive")
    n_v = ws.num_voxels
    tensor = np.zeros((3, t_budget, n_v), np.float32)
    counts = np.zeros(n_v, np.int64)
    if len(cloud) == 0:
        return VoxelizedFrame(tensor, counts, np.empty(0, np.int64), ws, t_budget)

    shuffled = shuffle(cloud, seed)
    idx = _grid_indices(shuffled.xyz, ws)
    n = np.asarray(ws.counts, np.int64)
    if np.any(idx < 0) or np.any(idx >= n):
        raise ValueError("cloud contains points outside the workspace; crop first")
    ids = linearize(idx, ws)

    # stable sort groups points by voxel while preserving shuffled order
    order = np.argsort(ids, kind="stable")
    ids_sorted = ids[order]
    full_counts = np.bincount(ids_sorted, minlength=n_v)
    starts = np.concatenate([[0], np.cumsum(full_counts)[:-1]])
    rank = np.arange(len(ids_sorted)) - starts[ids_sorted]  # position within voxel

    keep = rank < t_budget
    kept_order = order[keep]
    kept_ids = ids_sorted[keep]
    kept_rank = rank[keep]

    corners = voxel_corner(idx[kept_order], ws)
    rel = (shuffled.xyz[kept_order].astype(np.float64) - corners).astype(np.float32)
    tensor[:, kept_rank, kept_ids] = rel.T

    counts = np.minimum(full_counts, t_budget)
    occupied = np.flatnonzero(full_counts).astype(np.int64)
    return VoxelizedFrame(tensor, counts, occupied, ws, t_budget)
