"""The detection + regression model.

Per-voxel feature encoding (two feature-encoding layers with masked max
aggregation and point-wise concatenation, then a 64->64 layer and a final
masked max), a DenseUNet over the voxel grid, two 1x1x1 heads (2-class
scores, 4 cylinder parameters), and a per-instance point-set regressor that
maps a cropped point set to J joints in sphere-normalized coordinates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from .voxelizer import VoxelizedFrame

CHECKPOINT_MAGIC = b"PRCW"
CHECKPOINT_VERSION = 1

MASK_SENTINEL = -1e30  # added to padded slots so they never win a max


@dataclass(frozen=True)
class ModelConfig:
    """Shape parameters shared by weights, forward passes and checkpoints."""

    grid: tuple = (16, 8, 12)
    t_budget: int = 64
    vfe_channels: tuple = (32, 64)   # c_out of the two encoding layers
    fc_channels: int = 64
    unet_depth: int = 2
    unet_growth: int = 16
    joint_count: int = 11
    cylinder_params: int = 4
    pointnet_channels: tuple = (64, 128, 1024)
    pointnet_head: tuple = (512, 256)
    min_instance_points: int = 32
    max_instance_points: int = 1024

    def __post_init__(self):
        if any(c % 2 for c in self.vfe_channels):
            raise ValueError("encoding layer output channels must be even")
        if self.joint_count < 1:
            raise ValueError("joint_count must be >= 1")
        if self.unet_depth < 1:
            raise ValueError("unet_depth must be >= 1")
        for dim in self.grid:
            if dim % (2 ** self.unet_depth):
                raise ValueError(f"grid dims {self.grid} must be divisible by 2^{self.unet_depth}")


def weight_shapes(cfg: ModelConfig) -> dict:
    """Deterministic name -> shape map for every learnable tensor."""
    shapes = {}
    c_in = 3
    for i, c_out in enumerate(cfg.vfe_channels, start=1):
        shapes[f"vfe{i}.w"] = (c_in, c_out // 2)
        shapes[f"vfe{i}.b"] = (c_out // 2,)
        c_in = c_out
    shapes["vfe_fc.w"] = (cfg.vfe_channels[-1], cfg.fc_channels)
    shapes["vfe_fc.b"] = (cfg.fc_channels,)

    c = cfg.fc_channels
    g = cfg.unet_growth
    block_out = c + 2 * g
    for level in range(cfg.unet_depth + 1):
        shapes[f"unet.block{level}.conv1.k"] = (g, c, 3, 3, 3)
        shapes[f"unet.block{level}.conv1.b"] = (g,)
        shapes[f"unet.block{level}.conv2.k"] = (g, c + g, 3, 3, 3)
        shapes[f"unet.block{level}.conv2.b"] = (g,)
        if level < cfg.unet_depth:
            shapes[f"unet.down{level}.k"] = (c, block_out, 2, 2, 2)
            shapes[f"unet.down{level}.b"] = (c,)
    for level in range(cfg.unet_depth - 1, -1, -1):
        carried = block_out if level == cfg.unet_depth - 1 else c
        shapes[f"unet.fuse{level}.k"] = (c, carried + block_out, 1, 1, 1)
        shapes[f"unet.fuse{level}.b"] = (c,)

    shapes["head_score.k"] = (2, c, 1, 1, 1)
    shapes["head_score.b"] = (2,)
    shapes["head_reg.k"] = (cfg.cylinder_params, c, 1, 1, 1)
    shapes["head_reg.b"] = (cfg.cylinder_params,)

    p_in = 3
    for i, p_out in enumerate(cfg.pointnet_channels, start=1):
        shapes[f"pn{i}.w"] = (p_in, p_out)
        shapes[f"pn{i}.b"] = (p_out,)
        p_in = p_out
    for i, p_out in enumerate(cfg.pointnet_head, start=1):
        shapes[f"pn_fc{i}.w"] = (p_in, p_out)
        shapes[f"pn_fc{i}.b"] = (p_out,)
        p_in = p_out
    shapes["pn_out.w"] = (p_in, cfg.joint_count * 3)
    shapes["pn_out.b"] = (cfg.joint_count * 3,)
    return shapes


def init_weights(cfg: ModelConfig, seed: int = 0) -> dict:
    """Uniform fan-in-scaled init, biases zero, reproducible for a seed."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in weight_shapes(cfg).items():
        if name.endswith(".b"):
            data = np.zeros(shape, np.float32)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 5 else shape[0]
            limit = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-limit, limit, shape).astype(np.float32)
        weights[name] = nn.Tensor(data, requires_grad=True)
    return weights


# ---------------------------------------------------------------------------
# voxel feature encoding


def _sentinel_from_mask(mask: np.ndarray) -> np.ndarray:
    """(T, K) slot-occupancy mask -> additive (T, K, 1) pre-max sentinel."""
    return np.where(mask, 0.0, MASK_SENTINEL)[:, :, None].astype(np.float32)


def _encode_layer(h, sentinel, w, b):
    """Affine+ReLU per point, masked max per voxel, aggregate concatenated back."""
    t_budget = h.data.shape[0]
    pt = nn.relu(nn.affine(h, w, b))                       # (T, K, c/2)
    agg = nn.max_over_axis(nn.add(pt, sentinel), 0)        # (K, c/2)
    return nn.concat([pt, nn.repeat_axis(agg, t_budget, 0)], axis=2)


def vfe_layer(x, mask, w, b):
    """One feature-encoding layer in (c, T, N_v) layout; mask is (T, N_v) slot
    occupancy.

    Padded slots are pushed down with a large negative sentinel before the
    max, so they never beat negative features; fully empty voxels yield a
    zero aggregate.
    """
    x = x if isinstance(x, nn.Tensor) else nn.Tensor(x)
    mask = np.asarray(mask, bool)
    sentinel = _sentinel_from_mask(mask)
    h = nn.transpose(x, (1, 2, 0))                         # (T, N_v, c_in)
    pt = nn.relu(nn.affine(h, w, b))
    agg = nn.max_over_axis(nn.add(pt, sentinel), 0)
    agg = nn.mul(agg, mask.any(axis=0)[:, None].astype(np.float32))
    out = nn.concat([pt, nn.repeat_axis(agg, x.data.shape[1], 0)], axis=2)
    return nn.transpose(out, (2, 0, 1))                    # (c_out, T, N_v)


def encode_voxels(frame: VoxelizedFrame, weights: dict, cfg: ModelConfig):
    """Voxel tensor (3, T, N_v) -> feature volume (fc_channels, N_x, N_y, N_z).

    Only occupied voxels are pushed through the encoder; empty voxels take
    the zero feature by construction.
    """
    nx, ny, nz = cfg.grid
    if frame.workspace.counts != cfg.grid:
        raise ValueError(f"frame grid {frame.workspace.counts} != model grid {cfg.grid}")
    if frame.t_budget != cfg.t_budget:
        raise ValueError(f"frame T budget {frame.t_budget} != model {cfg.t_budget}")
    occ = frame.occupied_ids
    if len(occ) == 0:
        return nn.Tensor(np.zeros((cfg.fc_channels, nx, ny, nz), np.float32))
    counts = frame.count_per_voxel[occ]
    mask = np.arange(cfg.t_budget)[:, None] < counts[None, :]   # (T, K)
    sentinel = _sentinel_from_mask(mask)
    h = nn.transpose(nn.Tensor(frame.tensor[:, :, occ]), (1, 2, 0))  # (T, K, 3)
    for i in range(len(cfg.vfe_channels)):
        h = _encode_layer(h, sentinel, weights[f"vfe{i + 1}.w"], weights[f"vfe{i + 1}.b"])
    h = nn.relu(nn.affine(h, weights["vfe_fc.w"], weights["vfe_fc.b"]))
    feat = nn.max_over_axis(nn.add(h, sentinel), 0)            # (K, c)
    dense = nn.scatter_rows(feat, occ, frame.workspace.num_voxels)
    return nn.reshape(nn.transpose(dense, (1, 0)), (cfg.fc_channels, nx, ny, nz))


# ---------------------------------------------------------------------------
# grid aggregation


def _dense_block(x, weights, prefix):
    """Two 3x3x3 growth convolutions, each seeing all previous features."""
    y1 = nn.relu(nn.conv3d(x, weights[f"{prefix}.conv1.k"], weights[f"{prefix}.conv1.b"],
                           padding=1))
    x1 = nn.concat([x, y1], axis=0)
    y2 = nn.relu(nn.conv3d(x1, weights[f"{prefix}.conv2.k"], weights[f"{prefix}.conv2.b"],
                           padding=1))
    return nn.concat([x1, y2], axis=0)


def aggregate(volume, weights: dict, cfg: ModelConfig):
    """DenseUNet over the voxel grid; spatial shape and channel count preserved."""
    skips = []
    h = volume
    for level in range(cfg.unet_depth):
        blk = _dense_block(h, weights, f"unet.block{level}")
        skips.append(blk)
        h = nn.relu(nn.conv3d(blk, weights[f"unet.down{level}.k"],
                              weights[f"unet.down{level}.b"], stride=2))
    h = _dense_block(h, weights, f"unet.block{cfg.unet_depth}")
    for level in range(cfg.unet_depth - 1, -1, -1):
        up = nn.upsample_nearest3d(h, 2)
        cat = nn.concat([up, skips[level]], axis=0)
        h = nn.relu(nn.conv3d(cat, weights[f"unet.fuse{level}.k"],
                              weights[f"unet.fuse{level}.b"]))
    return h


def detection_heads(features, weights: dict):
    """Per-voxel class logits (2, grid) and cylinder parameters (4, grid)."""
    scores = nn.conv3d(features, weights["head_score.k"], weights["head_score.b"])
    reg = nn.conv3d(features, weights["head_reg.k"], weights["head_reg.b"])
    return scores, reg


def forward_detection(frame: VoxelizedFrame, weights: dict, cfg: ModelConfig):
    """Full detection pass: voxel tensor -> (scores, cylinder regression)."""
    return detection_heads(aggregate(encode_voxels(frame, weights, cfg), weights, cfg),
                           weights)


# ---------------------------------------------------------------------------
# per-instance joint regression


def pointnet_regress(points, weights: dict, cfg: ModelConfig):
    """Point set (3, M) -> (J, 3) joints in sphere-normalized coordinates.

    Shared per-point layers, a global max, then a small head; exactly
    invariant to point order and duplication.
    """
    x = points if isinstance(points, nn.Tensor) else nn.Tensor(points)
    m = x.data.shape[1]
    if not cfg.min_instance_points <= m <= cfg.max_instance_points:
        raise ValueError(f"instance has {m} points, expected "
                         f"[{cfg.min_instance_points}, {cfg.max_instance_points}]")
    h = nn.transpose(x, (1, 0))                                   # (M, 3)
    for i in range(1, len(cfg.pointnet_channels) + 1):
        h = nn.relu(nn.affine(h, weights[f"pn{i}.w"], weights[f"pn{i}.b"]))
    g = nn.reshape(nn.max_over_axis(h, 0), (1, cfg.pointnet_channels[-1]))
    for i in range(1, len(cfg.pointnet_head) + 1):
        g = nn.relu(nn.affine(g, weights[f"pn_fc{i}.w"], weights[f"pn_fc{i}.b"]))
    out = nn.affine(g, weights["pn_out.w"], weights["pn_out.b"])  # (1, J*3)
    return nn.reshape(out, (cfg.joint_count, 3))


# ---------------------------------------------------------------------------
# checkpoints


def write_checkpoint(path, weights: dict) -> None:
    """Binary weight map: PRCW magic, u32 version, then per tensor
    (u32 name length, name bytes, u32 rank, u32 dims, f32 LE payload)."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, t in weights.items():
            data = np.ascontiguousarray(t.data if isinstance(t, nn.Tensor) else t,
                                        dtype="<f4")
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def read_checkpoint(path) -> dict:
    """Inverse of write_checkpoint; returns name -> float32 array."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    out = {}
    pos = 8
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode()
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
            out[name] = arr.reshape(dims).copy()
    except (struct.error, ValueError) as e:
        raise ValueError(f"{path}: truncated or corrupt checkpoint") from e
    return out


def load_weights(path, cfg: ModelConfig) -> dict:
    """Read a checkpoint and validate it against the model configuration."""
    raw = read_checkpoint(path)
    expected = weight_shapes(cfg)
    missing = sorted(set(expected) - set(raw))
    extra = sorted(set(raw) - set(expected))
    if missing or extra:
        raise ValueError(f"{path}: weight names do not match the model "
                         f"(missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if raw[name].shape != shape:
            raise ValueError(f"{path}: {name} has shape {raw[name].shape}, expected {shape}")
    return {name: nn.Tensor(raw[name], requires_grad=True) for name in expected}
