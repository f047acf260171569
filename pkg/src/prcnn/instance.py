"""From voxel-grid detections to per-person point sets and world joints.

Decode head outputs into scored cylinders, suppress duplicates, cut each
person's points out of the fused cloud, map them into the unit sphere the
regressor expects, and map predicted joints back to world coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .metrics import cylinder_iou
from .pointcloud import PointCloud, Workspace
from .targets import Cylinder, decode_cylinder

SCORE_THRESHOLD = 0.5
NMS_IOU = 0.3


@dataclass
class Detection:
    """One decoded cylinder proposal with its positive-class probability."""

    cylinder: Cylinder
    score: float
    voxel_id: int = -1

    def __post_init__(self):
        if not np.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass
class InstanceCrop:
    """Sphere-normalized point set for one detected or ground-truth person.

    points: (3, M) float32 normalized coordinates, 32 <= M <= 1024;
    center/scale define the world transform q = (p - center) / scale.
    """

    points: np.ndarray
    center: np.ndarray
    scale: float
    cylinder: Cylinder


def positive_probability(scores: np.ndarray) -> np.ndarray:
    """Stable softmax over the 2-class axis; returns P(class 1), shape (N_v,)."""
    s = scores.reshape(2, -1).astype(np.float64)
    m = s.max(axis=0)
    e = np.exp(s - m)
    return e[1] / e.sum(axis=0)


def decode_detections(scores, reg, ws: Workspace, score_threshold: float = SCORE_THRESHOLD):
    """Head outputs (2, grid) and (4, grid) -> score-sorted Detections.

    Voxels whose positive probability reaches the threshold are decoded with
    the inverse target normalization.
    """
    prob = positive_probability(np.asarray(scores))
    reg_flat = np.asarray(reg)
    reg_flat = reg_flat.reshape(reg_flat.shape[0], -1)
    keep = np.flatnonzero(prob >= score_threshold)
    keep = keep[np.argsort(-prob[keep], kind="stable")]
    return [Detection(decode_cylinder(int(lid), reg_flat[:, lid], ws),
                      float(prob[lid]), int(lid)) for lid in keep]


def nms(dets, iou_threshold: float = NMS_IOU):
    """Greedy duplicate suppression: keep the best remaining detection, drop
    all others overlapping it above the IoU threshold."""
    ordered = sorted(dets, key=lambda d: -d.score)
    kept = []
    for det in ordered:
        if all(cylinder_iou(det.cylinder, k.cylinder) <= iou_threshold for k in kept):
            kept.append(det)
    return kept


def sphere_normalize(points: np.ndarray, cyl: Cylinder) -> np.ndarray:
    """q = (p - c) / (h/2), c the cylinder's mid-height axis point."""
    h = cyl.height
    if h <= 0:
        raise ValueError("cylinder height must be positive")
    c = np.array([cyl.axis_x, cyl.bottom_y + h / 2.0, cyl.axis_z], np.float64)
    return (np.asarray(points, np.float64) - c) / (h / 2.0)


def denormalize_joints(joints_norm: np.ndarray, cyl: Cylinder) -> np.ndarray:
    """Inverse of sphere_normalize: p = q * (h/2) + c."""
    h = cyl.height
    c = np.array([cyl.axis_x, cyl.bottom_y + h / 2.0, cyl.axis_z], np.float64)
    return np.asarray(joints_norm, np.float64) * (h / 2.0) + c


def extract_instance_points(cloud: PointCloud, cyl: Cylinder, rng,
                            max_points: int = 1024, min_points: int = 32):
    """Points of the fused cloud inside the cylinder, sphere-normalized.

    Uniformly subsampled to max_points when larger; returns None (discard)
    when fewer than min_points fall inside.
    """
    inside = np.flatnonzero(cyl.contains(cloud.xyz))
    if len(inside) < min_points:
        return None
    if len(inside) > max_points:
        inside = inside[rng.choice(len(inside), size=max_points, replace=False)]
    world = cloud.xyz[inside].astype(np.float64)
    norm = sphere_normalize(world, cyl).astype(np.float32)
    c = np.array([cyl.axis_x, cyl.bottom_y + cyl.height / 2.0, cyl.axis_z], np.float64)
    return InstanceCrop(points=np.ascontiguousarray(norm.T), center=c,
                        scale=cyl.height / 2.0, cylinder=cyl)


# ---------------------------------------------------------------------------
# inference output


def inference_result(frame_id: str, detections, joints_per_detection, joint_names) -> dict:
    """Build the frame inference document.

    joints_per_detection aligns with detections; entries are (J, 3) world
    arrays or None for instances discarded for lack of points (the
    detection itself is still reported for detection metrics).
    """
    out = []
    for det, joints in zip(detections, joints_per_detection):
        cyl = det.cylinder
        rec = {
            "score": float(det.score),
            "cylinder": {"axis_x": cyl.axis_x, "axis_z": cyl.axis_z,
                         "top_y": cyl.top_y, "radius": cyl.radius},
            "joints": None if joints is None else {
                name: [float(v) for v in joints[j]] for j, name in enumerate(joint_names)},
        }
        out.append(rec)
    return {"frame_id": frame_id, "detections": out}


def write_inference_result(path, doc: dict) -> None:
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
