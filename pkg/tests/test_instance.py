"""Detection decoding, duplicate suppression, instance cropping, and the
sphere normalization used by the joint regressor."""

import json

import numpy as np
import pytest

from prcnn.instance import (Detection, decode_detections, denormalize_joints,
                            extract_instance_points, inference_result, nms,
                            positive_probability, sphere_normalize,
                            write_inference_result)
from prcnn.metrics import cylinder_iou
from prcnn.pointcloud import PointCloud, Workspace
from prcnn.targets import CMU_JOINTS, Cylinder, encode_cylinder
from prcnn.voxelizer import voxel_center

WS = Workspace()


class TestPositiveProbability:
    def test_softmax_values(self):
        logits = np.array([[0.0, 5.0], [0.0, -5.0]], np.float32)  # (2, 2)
        p = positive_probability(logits)
        assert p[0] == pytest.approx(0.5)
        assert p[1] == pytest.approx(1.0 / (1.0 + np.exp(10.0)), rel=1e-6)

    def test_overflow_stable(self):
        logits = np.array([[1000.0], [-1000.0]], np.float32)
        p = positive_probability(logits)
        assert np.isfinite(p).all() and p[0] == pytest.approx(0.0)


class TestDecodeDetections:
    def _scores(self, hot, value=20.0):
        s = np.zeros((2, WS.num_voxels), np.float32)
        s[1, :] = -value
        for lid in hot:
            s[1, lid] = value
        return s

    def test_empty_when_all_background(self):
        reg = np.zeros((4, WS.num_voxels), np.float32)
        assert decode_detections(self._scores([]), reg, WS) == []

    def test_identity_regression_decodes_voxel_center(self):
        lid = 700
        reg = np.zeros((4, WS.num_voxels), np.float32)
        dets = decode_detections(self._scores([lid]), reg, WS)
        assert len(dets) == 1
        cx, cy, cz = voxel_center(np.int64(lid), WS)
        det = dets[0]
        assert det.voxel_id == lid
        assert det.cylinder.axis_x == pytest.approx(cx)
        assert det.cylinder.axis_z == pytest.approx(cz)
        assert det.cylinder.top_y == pytest.approx(cy)
        assert det.cylinder.radius == pytest.approx(0.3)  # reference radius
        assert det.score > 0.99

    def test_encode_decode_consistency(self):
        # a head that outputs the exact regression target recovers the cylinder
        cyl = Cylinder(1.3, 2.1, top_y=1.7, radius=0.27, bottom_y=WS.ground_y)
        lid = 421
        reg = np.zeros((4, WS.num_voxels), np.float32)
        reg[:, lid] = encode_cylinder(cyl, lid, WS)
        det = decode_detections(self._scores([lid]), reg, WS)[0]
        assert det.cylinder.axis_x == pytest.approx(cyl.axis_x, abs=1e-5)
        assert det.cylinder.axis_z == pytest.approx(cyl.axis_z, abs=1e-5)
        assert det.cylinder.top_y == pytest.approx(cyl.top_y, abs=1e-5)
        assert det.cylinder.radius == pytest.approx(cyl.radius, abs=1e-5)

    def test_score_ordering_and_threshold(self):
        s = np.zeros((2, WS.num_voxels), np.float32)
        s[1, :] = -20.0
        s[1, 10] = 1.0    # p ~ 0.73
        s[1, 20] = 3.0    # p ~ 0.95
        s[1, 30] = -0.1   # p ~ 0.475, below threshold
        reg = np.zeros((4, WS.num_voxels), np.float32)
        dets = decode_detections(s, reg, WS, score_threshold=0.5)
        assert [d.voxel_id for d in dets] == [20, 10]
        assert dets[0].score > dets[1].score

    def test_grid_shaped_input(self):
        s = np.zeros((2, 16, 8, 12), np.float32)
        s[1] = -20.0
        reg = np.zeros((4, 16, 8, 12), np.float32)
        assert decode_detections(s, reg, WS) == []


class TestNms:
    def test_keeps_higher_score_of_pair(self):
        a = Detection(Cylinder(1.0, 1.0, 1.7, 0.3), 0.9)
        b = Detection(Cylinder(1.02, 1.0, 1.7, 0.3), 0.8)
        kept = nms([b, a], iou_threshold=0.3)
        assert kept == [a]

    def test_disjoint_all_kept(self):
        a = Detection(Cylinder(0.5, 0.5, 1.7, 0.2), 0.9)
        b = Detection(Cylinder(2.5, 2.0, 1.7, 0.2), 0.5)
        assert len(nms([a, b])) == 2

    def test_chain_suppression_matches_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            dets = [Detection(Cylinder(rng.uniform(0.5, 3.0), rng.uniform(0.5, 2.5),
                                       top_y=rng.uniform(1.2, 1.9),
                                       radius=rng.uniform(0.15, 0.5)),
                    float(rng.uniform(0.5, 1.0))) for _ in range(12)]
            kept = nms(dets, iou_threshold=0.3)
            # reference: explicit greedy loop
            pool = sorted(dets, key=lambda d: -d.score)
            expect = []
            while pool:
                best = pool.pop(0)
                expect.append(best)
                pool = [d for d in pool
                        if cylinder_iou(d.cylinder, best.cylinder) <= 0.3]
            assert kept == expect

    def test_empty(self):
        assert nms([]) == []


class TestSphereNormalize:
    def test_center_maps_to_origin(self):
        cyl = Cylinder(1.0, 2.0, top_y=1.8, radius=0.3, bottom_y=0.0)
        center = np.array([[1.0, 0.9, 2.0]])
        assert sphere_normalize(center, cyl)[0] == pytest.approx([0.0, 0.0, 0.0])

    def test_top_maps_to_unit_y(self):
        cyl = Cylinder(1.0, 2.0, top_y=1.8, radius=0.3, bottom_y=0.0)
        top = np.array([[1.0, 1.8, 2.0]])
        assert sphere_normalize(top, cyl)[0] == pytest.approx([0.0, 1.0, 0.0])
        bottom = np.array([[1.0, 0.0, 2.0]])
        assert sphere_normalize(bottom, cyl)[0] == pytest.approx([0.0, -1.0, 0.0])

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        cyl = Cylinder(1.3, 0.8, top_y=1.65, radius=0.4, bottom_y=0.0)
        pts = rng.uniform(0, 2, (50, 3))
        back = denormalize_joints(sphere_normalize(pts, cyl), cyl)
        assert back == pytest.approx(pts, abs=1e-6)

    def test_ground_offset_respected(self):
        cyl = Cylinder(1.0, 1.0, top_y=2.0, radius=0.3, bottom_y=1.0)
        mid = np.array([[1.0, 1.5, 1.0]])
        assert sphere_normalize(mid, cyl)[0] == pytest.approx([0.0, 0.0, 0.0])


class TestExtractInstancePoints:
    def _cloud_around(self, cyl, n_inside, n_outside, rng):
        ang = rng.uniform(0, 2 * np.pi, n_inside)
        r = cyl.radius * np.sqrt(rng.uniform(0, 1, n_inside))
        inside = np.stack([cyl.axis_x + r * np.cos(ang),
                           rng.uniform(cyl.bottom_y, cyl.top_y, n_inside),
                           cyl.axis_z + r * np.sin(ang)], axis=1)
        outside = inside.copy()[:n_outside]
        outside[:, 0] += 2 * cyl.radius + 0.5
        return PointCloud(np.concatenate([inside, outside]).astype(np.float32))

    def test_membership_exact(self):
        rng = np.random.default_rng(6)
        cyl = Cylinder(1.5, 1.5, top_y=1.7, radius=0.35)
        cloud = self._cloud_around(cyl, 200, 100, rng)
        crop = extract_instance_points(cloud, cyl, rng, max_points=1024)
        assert crop is not None
        assert crop.points.shape == (3, 200)
        # every crop point, denormalized, is inside; none of the outside
        # points leaked in
        world = crop.points.T * crop.scale + crop.center
        assert cyl.contains(world).all()

    def test_subsample_respects_membership(self):
        rng = np.random.default_rng(7)
        cyl = Cylinder(1.5, 1.5, top_y=1.7, radius=0.35)
        cloud = self._cloud_around(cyl, 3000, 500, rng)
        crop = extract_instance_points(cloud, cyl, rng, max_points=256)
        assert crop.points.shape == (3, 256)
        world = crop.points.T * crop.scale + crop.center
        assert cyl.contains(world).all()

    def test_discard_below_minimum(self):
        rng = np.random.default_rng(8)
        cyl = Cylinder(1.5, 1.5, top_y=1.7, radius=0.35)
        cloud = self._cloud_around(cyl, 31, 40, rng)
        assert extract_instance_points(cloud, cyl, rng) is None

    def test_exactly_minimum_kept(self):
        rng = np.random.default_rng(9)
        cyl = Cylinder(1.5, 1.5, top_y=1.7, radius=0.35)
        cloud = self._cloud_around(cyl, 32, 0, rng)
        crop = extract_instance_points(cloud, cyl, rng)
        assert crop is not None and crop.points.shape == (3, 32)

    def test_normalization_matches_cylinder(self):
        rng = np.random.default_rng(10)
        cyl = Cylinder(1.5, 1.5, top_y=1.8, radius=0.35)
        cloud = self._cloud_around(cyl, 100, 0, rng)
        crop = extract_instance_points(cloud, cyl, rng)
        assert crop.scale == pytest.approx(cyl.height / 2)
        assert crop.center == pytest.approx([1.5, 0.9, 1.5])
        # normalized y spans [-1, 1]
        assert crop.points[1].min() >= -1.0 - 1e-6
        assert crop.points[1].max() <= 1.0 + 1e-6


class TestInferenceResult:
    def test_schema_and_null_joints(self, tmp_path):
        dets = [Detection(Cylinder(1.0, 2.0, 1.7, 0.3), 0.95),
                Detection(Cylinder(2.0, 1.0, 1.6, 0.25), 0.60)]
        joints = [np.tile(np.array([[1.0, 1.5, 2.0]]), (11, 1)), None]
        doc = inference_result("f0042", dets, joints, CMU_JOINTS)
        assert doc["frame_id"] == "f0042"
        assert len(doc["detections"]) == 2
        first, second = doc["detections"]
        assert first["score"] == pytest.approx(0.95)
        assert first["cylinder"] == {"axis_x": 1.0, "axis_z": 2.0,
                                     "top_y": 1.7, "radius": 0.3}
        assert set(first["joints"].keys()) == set(CMU_JOINTS)
        assert first["joints"]["Neck"] == [1.0, 1.5, 2.0]
        assert second["joints"] is None

        path = tmp_path / "out.json"
        write_inference_result(path, doc)
        assert json.loads(path.read_text()) == doc


class TestDetectionValidation:
    def test_score_bounds(self):
        cyl = Cylinder(1.0, 1.0, 1.7, 0.3)
        with pytest.raises(ValueError):
            Detection(cyl, 1.5)
        with pytest.raises(ValueError):
            Detection(cyl, float("nan"))
