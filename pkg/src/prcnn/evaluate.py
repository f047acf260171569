"""Frame inference and dataset evaluation.

Runs the full pipeline -- fuse, crop, filter, voxelize, detect, suppress
duplicates, crop instances, regress joints -- and aggregates detection AP
plus per-joint distance/accuracy over a dataset.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .instance import decode_detections, extract_instance_points, nms
from .metrics import EvalReport, build_report, match_detections
from .network import ModelConfig, forward_detection, pointnet_regress
from .pointcloud import Workspace, load_frame_clouds
from .synthdata import read_dataset_manifest
from .targets import read_annotation, skeleton_to_cylinder
from .training import preprocess_frame
from .voxelizer import build_voxel_tensor


def run_frame_inference(clouds, weights: dict, model_cfg: ModelConfig,
                        ws: Workspace, pipeline: PipelineConfig, rng):
    """Per-sensor clouds -> (detections, per-detection joints).

    Joints align with detections; an entry is None when the detected
    cylinder holds too few points for regression (the detection is still
    reported). Joint arrays are (J, 3) in world meters.
    """
    cloud = preprocess_frame(clouds, ws, pipeline.filter_cell)
    vox = build_voxel_tensor(cloud, ws, model_cfg.t_budget,
                             seed=int(rng.integers(2 ** 31)))
    scores, reg = forward_detection(vox, weights, model_cfg)
    dets = nms(decode_detections(scores.data, reg.data, ws,
                                 pipeline.score_threshold), pipeline.nms_iou)
    joints = []
    for det in dets:
        crop = extract_instance_points(cloud, det.cylinder, rng,
                                       pipeline.max_instance_points,
                                       pipeline.min_instance_points)
        if crop is None:
            joints.append(None)
            continue
        pred = pointnet_regress(crop.points, weights, model_cfg).data
        joints.append(pred.astype(np.float64) * crop.scale + crop.center)
    return dets, joints


def evaluate_dataset(data_dir, weights: dict, model_cfg: ModelConfig,
                     pipeline: PipelineConfig, drop_sensors=(), seed: int = 0,
                     iou_min: float = 0.5) -> EvalReport:
    """Run inference over every frame and report AP, DIST, and ACC.

    drop_sensors simulates camera failures by skipping those sensor ids at
    load time. Joint metrics cover true-positive detections only; absent
    ground-truth joints are excluded.
    """
    base = Path(data_dir)
    ws, joint_names, manifests = read_dataset_manifest(base / "manifest.json")
    if ws.counts != model_cfg.grid:
        raise ValueError(f"dataset grid {ws.counts} != model grid {model_cfg.grid}")
    if len(joint_names) != model_cfg.joint_count:
        raise ValueError(f"dataset has {len(joint_names)} joints, "
                         f"model expects {model_cfg.joint_count}")
    rng = np.random.default_rng(seed)
    all_tp, all_scores, joint_pairs = [], [], []
    gt_count = 0
    for m in manifests:
        clouds = load_frame_clouds(m, base, drop_sensors)
        skeletons = read_annotation(base / m.annotation_path)
        gt_cyls = [skeleton_to_cylinder(s, ws.ground_y) for s in skeletons]
        gt_count += len(gt_cyls)
        dets, joints = run_frame_inference(clouds, weights, model_cfg, ws,
                                           pipeline, rng)
        match = match_detections(dets, gt_cyls, iou_min)
        all_tp.extend(match.tp.tolist())
        all_scores.extend(match.scores.tolist())
        for rank in np.flatnonzero(match.tp):
            pred = joints[match.det_index[rank]]
            if pred is None:
                continue
            gt_arr, gt_mask = skeletons[match.det_gt[rank]].joint_matrix(joint_names)
            joint_pairs.append((pred, gt_arr.astype(np.float64), gt_mask))
    return build_report(all_tp, all_scores, gt_count, joint_pairs, joint_names)
