"""Detection and joint-regression metrics.

Cylinder IoU in closed form (vertical cylinders: circle-circle lens area
times vertical overlap), greedy score-ordered matching at IoU > 0.5,
all-point interpolated average precision, and per-joint DIST (cm) / ACC
(fraction under a distance threshold) over true-positive detections only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .targets import Cylinder

DEFAULT_THRESHOLDS_CM = tuple(range(1, 31))  # accuracy curve grid
ACC_DEFAULT_CM = 10.0


def _circle_overlap_area(r1: float, r2: float, d: float) -> float:
    """Area of the intersection of two circles with center distance d."""
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        r = min(r1, r2)
        return np.pi * r * r
    a1 = r1 * r1 * np.arccos((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1))
    a2 = r2 * r2 * np.arccos((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2))
    k = ((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2))
    return float(a1 + a2 - 0.5 * np.sqrt(max(k, 0.0)))


def cylinder_iou(a: Cylinder, b: Cylinder) -> float:
    """Exact intersection-over-union of two vertical cylinders."""
    v_lo = max(a.bottom_y, b.bottom_y)
    v_hi = min(a.top_y, b.top_y)
    if v_hi <= v_lo:
        return 0.0
    d = float(np.hypot(a.axis_x - b.axis_x, a.axis_z - b.axis_z))
    inter = _circle_overlap_area(a.radius, b.radius, d) * (v_hi - v_lo)
    union = a.volume + b.volume - inter
    return float(inter / union)


@dataclass
class MatchResult:
    """Greedy matching of score-sorted detections against ground truth.

    Arrays are in descending-score rank order; det_index maps each rank back
    to its position in the input sequence.
    """

    tp: np.ndarray          # (n_det,) bool
    det_gt: np.ndarray      # (n_det,) int64, matched gt index or -1
    gt_matched: np.ndarray  # (n_gt,) bool
    scores: np.ndarray      # (n_det,) float64, descending
    det_index: np.ndarray   # (n_det,) int64


def match_detections(dets, gts, iou_min: float = 0.5) -> MatchResult:
    """TP if the best-IoU unmatched ground truth exceeds iou_min; greedy in
    score order, each ground truth used once, later duplicates are FP.

    dets: sequence with .cylinder and .score; gts: sequence of Cylinder.
    """
    order = np.argsort([-d.score for d in dets], kind="stable")
    n_det, n_gt = len(dets), len(gts)
    tp = np.zeros(n_det, bool)
    det_gt = np.full(n_det, -1, np.int64)
    gt_matched = np.zeros(n_gt, bool)
    scores = np.empty(n_det, np.float64)
    for rank, di in enumerate(order):
        det = dets[di]
        scores[rank] = det.score
        best_iou, best_gt = 0.0, -1
        for gi in range(n_gt):
            if gt_matched[gi]:
                continue
            iou = cylinder_iou(det.cylinder, gts[gi])
            if iou > best_iou:
                best_iou, best_gt = iou, gi
        if best_gt >= 0 and best_iou > iou_min:
            tp[rank] = True
            det_gt[rank] = best_gt
            gt_matched[best_gt] = True
    return MatchResult(tp, det_gt, gt_matched, scores, order.astype(np.int64))


def average_precision(tp_flags, scores, gt_count: int):
    """Area under the monotone precision-recall envelope (all-point form).

    tp_flags/scores cover the whole dataset; order is re-derived from the
    scores. Returns None when gt_count is 0 (undefined).
    """
    if gt_count == 0:
        return None
    tp_flags = np.asarray(tp_flags, bool)
    scores = np.asarray(scores, np.float64)
    if len(tp_flags) == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = tp_flags[order]
    cum_tp = np.cumsum(tp)
    recall = cum_tp / gt_count
    precision = cum_tp / np.arange(1, len(tp) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_r) * envelope))


@dataclass
class EvalReport:
    """Aggregate metrics in the layout of the per-joint result tables."""

    ap: float | None
    per_joint: dict                 # name -> {"dist_cm", "acc_pct"} (None when no data)
    mean_dist_cm: float | None
    mean_acc_pct: float | None
    curve: list                     # [{"threshold_cm", "acc_pct"}]
    n_gt: int = 0
    n_det: int = 0
    n_tp: int = 0

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "per_joint": self.per_joint,
            "mean": {"dist_cm": self.mean_dist_cm, "acc_pct": self.mean_acc_pct},
            "curve": self.curve,
            "counts": {"gt": self.n_gt, "detections": self.n_det, "true_positives": self.n_tp},
        }


def joint_metrics(pairs, joint_names, thresholds_cm=DEFAULT_THRESHOLDS_CM,
                  acc_cm: float = ACC_DEFAULT_CM):
    """Per-joint DIST/ACC over matched (pred, gt, gt_mask) triples.

    pairs: sequence of (pred (J,3) world meters, gt (J,3), mask (J,) bool);
    masked-out ground-truth joints are excluded from numerator and
    denominator. Returns (per_joint dict, mean dist, mean acc, curve).
    """
    j = len(joint_names)
    residuals = [[] for _ in range(j)]
    for pred, gt, mask in pairs:
        pred = np.asarray(pred, np.float64)
        gt = np.asarray(gt, np.float64)
        err = np.linalg.norm(pred - gt, axis=1) * 100.0  # cm
        for ji in range(j):
            if mask[ji]:
                residuals[ji].append(err[ji])

    per_joint = {}
    dists, accs = [], []
    for ji, name in enumerate(joint_names):
        r = np.asarray(residuals[ji])
        if len(r) == 0:
            per_joint[name] = {"dist_cm": None, "acc_pct": None}
            continue
        dist = float(r.mean())
        acc = float((r < acc_cm).mean() * 100.0)
        per_joint[name] = {"dist_cm": dist, "acc_pct": acc}
        dists.append(dist)
        accs.append(acc)

    pooled = np.concatenate([np.asarray(r) for r in residuals]) if any(residuals) else np.empty(0)
    curve = [{"threshold_cm": float(t),
              "acc_pct": float((pooled < t).mean() * 100.0) if len(pooled) else None}
             for t in thresholds_cm]
    mean_dist = float(np.mean(dists)) if dists else None
    mean_acc = float(np.mean(accs)) if accs else None
    return per_joint, mean_dist, mean_acc, curve


def build_report(all_tp, all_scores, gt_count, joint_pairs, joint_names,
                 thresholds_cm=DEFAULT_THRESHOLDS_CM) -> EvalReport:
    """Assemble the dataset-level report from accumulated match results."""
    per_joint, mean_dist, mean_acc, curve = joint_metrics(joint_pairs, joint_names,
                                                          thresholds_cm)
    return EvalReport(
        ap=average_precision(all_tp, all_scores, gt_count),
        per_joint=per_joint,
        mean_dist_cm=mean_dist,
        mean_acc_pct=mean_acc,
        curve=curve,
        n_gt=int(gt_count),
        n_det=len(all_tp),
        n_tp=int(np.sum(np.asarray(all_tp, bool))) if len(all_tp) else 0,
    )


def write_report(path, report: EvalReport) -> None:
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=1)
