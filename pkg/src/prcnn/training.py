"""Training loops for the detection + joint-regression pipeline.

Two modes share one data path. End-to-end optimizes the joint objective
(classification + cylinder regression + joint regression) in every step;
staged spends the first half of the epoch budget on the detector alone,
freezes it, and spends the rest on the joint regressor. In both modes the
regressor is teacher-forced: instance crops come from ground-truth
cylinders, so detection quality never gates its supervision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nncore as nn
from .config import require_key
from .instance import extract_instance_points
from .network import (ModelConfig, forward_detection, init_weights,
                      pointnet_regress, write_checkpoint)
from .pointcloud import (PointCloud, Workspace, crop_workspace, fuse,
                         load_frame_clouds, voxel_grid_filter)
from .synthdata import apply_dropout, read_dataset_manifest
from .targets import (VoxelTargets, assign_voxel_targets, read_annotation,
                      sample_training_voxels, skeleton_to_cylinder)
from .voxelizer import build_voxel_tensor

MODES = ("end_to_end", "staged")


@dataclass
class TrainConfig:
    epochs: int
    mode: str = "end_to_end"
    lam: float = 1.0            # cylinder-regression weight
    lam2: float = 1.0           # joint-regression weight
    batch_size: int = 4
    learning_rate: float = 1e-3
    seed: int = 0
    n_inst: int = 32            # instance crops per optimization step
    dropout_p: float = 0.2      # camera-dropout augmentation probability
    filter_cell: float = 0.025
    train_crop_points: int = 512

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ValueError("dropout_p must be in [0, 1]")
        if self.n_inst < 1:
            raise ValueError("n_inst must be >= 1")


def train_config_from_dict(cfg: dict) -> TrainConfig:
    """Build a TrainConfig from a resolved flat config mapping."""
    return TrainConfig(
        epochs=int(require_key(cfg, "epochs")),
        mode=require_key(cfg, "mode"),
        lam=float(require_key(cfg, "lambda")),
        lam2=float(require_key(cfg, "lambda2")),
        batch_size=int(require_key(cfg, "batch_size")),
        learning_rate=float(require_key(cfg, "learning_rate")),
        seed=int(require_key(cfg, "seed")),
        n_inst=int(require_key(cfg, "n_inst")),
        dropout_p=float(require_key(cfg, "dropout_p")),
        filter_cell=float(require_key(cfg, "filter_cell")),
        train_crop_points=int(require_key(cfg, "train_crop_points")),
    )


# ---------------------------------------------------------------------------
# dataset loading


@dataclass
class TrainFrame:
    frame_id: str
    clouds: list                 # per-sensor PointClouds, sensor-tagged
    skeletons: list              # Skeleton per person
    cylinders: list              # ground-truth Cylinder per person
    targets: VoxelTargets


@dataclass
class TrainingData:
    workspace: Workspace
    joint_names: list
    frames: list = field(default_factory=list)


def load_training_data(data_dir) -> TrainingData:
    """Read a generated dataset into memory with precomputed voxel targets."""
    base = Path(data_dir)
    ws, joint_names, manifests = read_dataset_manifest(base / "manifest.json")
    frames = []
    for m in manifests:
        clouds = load_frame_clouds(m, base)
        skeletons = read_annotation(base / m.annotation_path)
        cylinders = [skeleton_to_cylinder(s, ws.ground_y) for s in skeletons]
        frames.append(TrainFrame(m.frame_id, clouds, skeletons, cylinders,
                                 assign_voxel_targets(cylinders, ws)))
    return TrainingData(ws, joint_names, frames)


def preprocess_frame(clouds, ws: Workspace, filter_cell: float) -> PointCloud:
    """Shared input path: fuse registered clouds, crop, thin with a grid filter."""
    cloud = crop_workspace(fuse(clouds), ws)
    if filter_cell > 0:
        cloud = voxel_grid_filter(cloud, filter_cell)
    return cloud


# ---------------------------------------------------------------------------
# losses


def detection_loss(scores, reg, labels, reg_targets, sample_idx, lam):
    """Classification + gated cylinder regression over sampled voxels.

    scores: (2, M) logits, reg: (4, M); labels (M,) in {0,1}; both loss
    terms normalize by the sample size. Voxels outside the sample -- and the
    regression head at negative voxels -- receive exactly zero gradient.
    """
    n_sample = len(sample_idx)
    picked = nn.transpose(nn.gather(scores, sample_idx, axis=1), (1, 0))
    ce = nn.cross_entropy(picked, labels[sample_idx])
    pos = sample_idx[labels[sample_idx] == 1]
    if len(pos) == 0:
        return ce, float(ce.data), 0.0
    pred = nn.gather(reg, pos, axis=1)
    reg_term = nn.mul(nn.smooth_l1(pred, reg_targets[:, pos]), lam / n_sample)
    return nn.add(ce, reg_term), float(ce.data), float(reg_term.data)


def joint_loss(pred_stack, gt_norm, mask, lam2):
    """Masked squared error over real joints, normalized by their count.

    pred_stack: (K, J, 3); gt_norm: (K, J, 3) sphere-normalized targets;
    mask: (K, J) presence flags. Padded/absent joints contribute exactly
    zero to both the value and the gradient.
    """
    n_joints = float(mask.sum())
    if n_joints == 0:
        return None
    m3 = np.ascontiguousarray(mask[:, :, None], np.float32)
    diff = nn.add(pred_stack, (-gt_norm).astype(np.float32))
    masked = nn.mul(diff, m3)
    return nn.mul(nn.sum_all(nn.mul(masked, masked)), lam2 / n_joints)


def collect_instances(cloud: PointCloud, frame: TrainFrame, joint_names, rng,
                      max_points: int, min_points: int):
    """Teacher-forced crops: one per ground-truth cylinder with enough points.

    Returns (crops, gt (K, J, 3) sphere-normalized, mask (K, J))."""
    crops, gts, masks = [], [], []
    for skel, cyl in zip(frame.skeletons, frame.cylinders):
        crop = extract_instance_points(cloud, cyl, rng, max_points, min_points)
        if crop is None:
            continue
        arr, mask = skel.joint_matrix(joint_names)
        crops.append(crop)
        gts.append((arr.astype(np.float64) - crop.center) / crop.scale)
        masks.append(mask)
    if not crops:
        return [], None, None
    return crops, np.stack(gts).astype(np.float32), np.stack(masks)


# ---------------------------------------------------------------------------
# the loop


@dataclass
class TrainResult:
    weights: dict
    history: list
    checkpoint_path: Path
    detector_checkpoint_path: Path | None
    log_path: Path


def _epoch_batches(n_frames: int, batch_size: int, rng) -> list:
    order = rng.permutation(n_frames)
    return [order[i:i + batch_size] for i in range(0, n_frames, batch_size)]


def train(data: TrainingData, model_cfg: ModelConfig, cfg: TrainConfig,
          out_ckpt, log_path=None, progress=None) -> TrainResult:
    """Run training and write per-epoch checkpoints plus a JSON-lines log.

    Deterministic for a fixed (data, configs): one master RNG drives frame
    order, dropout, voxel sampling, target sampling, and crop subsampling in
    a fixed call order.
    """
    if not data.frames:
        raise ValueError("training data has no frames")
    if model_cfg.joint_count != len(data.joint_names):
        raise ValueError(f"model expects {model_cfg.joint_count} joints, "
                         f"dataset has {len(data.joint_names)}")
    out_ckpt = Path(out_ckpt)
    out_ckpt.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path else out_ckpt.with_suffix(".log.jsonl")

    rng = np.random.default_rng(cfg.seed)
    weights = init_weights(model_cfg, seed=cfg.seed)
    pn_names = sorted(n for n in weights if n.startswith("pn"))
    det_names = sorted(n for n in weights if not n.startswith("pn"))

    staged = cfg.mode == "staged"
    det_epochs = cfg.epochs // 2 if staged else cfg.epochs
    detector_path = (out_ckpt.with_name(out_ckpt.stem + "_detector" + out_ckpt.suffix)
                     if staged else None)

    history = []
    with open(log_path, "w") as log_file:
        def run_stage(opt, first, last, with_detection, with_joints):
            for epoch in range(first, last + 1):
                row = _run_epoch(data, weights, model_cfg, cfg, opt, rng, epoch,
                                 with_detection, with_joints)
                history.append(row)
                log_file.write(json.dumps(row) + "\n")
                log_file.flush()
                write_checkpoint(out_ckpt, weights)
                if progress is not None:
                    progress(row)

        if staged:
            run_stage(nn.Adam({n: weights[n] for n in det_names}, lr=cfg.learning_rate),
                      1, det_epochs, True, False)
            write_checkpoint(detector_path, weights)
            run_stage(nn.Adam({n: weights[n] for n in pn_names}, lr=cfg.learning_rate),
                      det_epochs + 1, cfg.epochs, False, True)
        else:
            run_stage(nn.Adam(weights, lr=cfg.learning_rate), 1, cfg.epochs, True, True)
    return TrainResult(weights, history, out_ckpt, detector_path, log_path)


def _run_epoch(data: TrainingData, weights, model_cfg, cfg: TrainConfig, opt,
               rng, epoch, with_detection, with_joints) -> dict:
    ws = data.workspace
    n_v = ws.num_voxels
    sums = {"loss_cls": 0.0, "loss_reg": 0.0, "loss_joints": 0.0, "total": 0.0}
    batches = _epoch_batches(len(data.frames), cfg.batch_size, rng)
    for batch in batches:
        frames = [data.frames[i] for i in batch]
        clouds = []
        for frame in frames:
            kept = (apply_dropout(frame.clouds, cfg.dropout_p, rng)
                    if cfg.dropout_p > 0 else frame.clouds)
            clouds.append(preprocess_frame(kept, ws, cfg.filter_cell))

        tape = nn.Tape()
        with tape:
            terms = []
            if with_detection:
                score_cols, reg_cols, labels, reg_t, sample = [], [], [], [], []
                for fi, (frame, cloud) in enumerate(zip(frames, clouds)):
                    vox = build_voxel_tensor(cloud, ws, model_cfg.t_budget,
                                             seed=int(rng.integers(2 ** 31)))
                    scores, reg = forward_detection(vox, weights, model_cfg)
                    score_cols.append(nn.reshape(scores, (2, n_v)))
                    reg_cols.append(nn.reshape(reg, (4, n_v)))
                    labels.append(frame.targets.labels)
                    reg_t.append(frame.targets.reg)
                    occ_mask = np.zeros(n_v, bool)
                    occ_mask[vox.occupied_ids] = True
                    sample.append(fi * n_v + sample_training_voxels(
                        frame.targets.labels, occ_mask, rng))
                det, cls_val, reg_val = detection_loss(
                    nn.concat(score_cols, axis=1), nn.concat(reg_cols, axis=1),
                    np.concatenate(labels), np.concatenate(reg_t, axis=1),
                    np.concatenate(sample), cfg.lam)
                terms.append(det)
                sums["loss_cls"] += cls_val
                sums["loss_reg"] += reg_val

            if with_joints and cfg.lam2 > 0:
                crops, gts, masks = [], [], []
                for frame, cloud in zip(frames, clouds):
                    c, g, m = collect_instances(
                        cloud, frame, data.joint_names, rng,
                        cfg.train_crop_points, model_cfg.min_instance_points)
                    if c:
                        crops.extend(c)
                        gts.append(g)
                        masks.append(m)
                if crops:
                    gts = np.concatenate(gts)
                    masks = np.concatenate(masks)
                    if len(crops) > cfg.n_inst:
                        pick = rng.choice(len(crops), cfg.n_inst, replace=False)
                        crops = [crops[i] for i in pick]
                        gts, masks = gts[pick], masks[pick]
                    preds = [nn.reshape(pointnet_regress(c.points, weights, model_cfg),
                                        (1, model_cfg.joint_count, 3)) for c in crops]
                    jterm = joint_loss(nn.concat(preds, axis=0), gts, masks, cfg.lam2)
                    if jterm is not None:
                        terms.append(jterm)
                        sums["loss_joints"] += float(jterm.data)

            if not terms:
                continue
            loss = terms[0]
            for t in terms[1:]:
                loss = nn.add(loss, t)
        sums["total"] += float(loss.data)
        opt.zero_grad()
        tape.backward(loss)
        opt.step()

    n = max(1, len(batches))
    row = {"epoch": epoch}
    row.update((k, v / n) for k, v in sums.items())
    return row
