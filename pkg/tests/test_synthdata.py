"""Synthetic capture: scene placement, capsule surface rendering, camera
dropout, and dataset files."""

import json

import numpy as np
import pytest

from prcnn.pointcloud import Workspace, fuse, read_cloud
from prcnn.synthdata import (Capsule, SyntheticPerson, VirtualCamera,
                             apply_dropout, default_cameras, generate_dataset,
                             generate_scene, read_dataset_manifest,
                             render_camera)
from prcnn.targets import CMU_JOINTS, skeleton_to_cylinder

WS = Workspace()


class TestGenerateScene:
    def test_person_count_and_ids(self):
        scene = generate_scene(np.random.default_rng(0), 3, WS)
        assert [p.skeleton.person_id for p in scene] == [0, 1, 2]

    def test_empty_scene(self):
        assert generate_scene(np.random.default_rng(0), 0, WS) == []

    def test_all_joints_present_inside_workspace(self):
        scene = generate_scene(np.random.default_rng(1), 4, WS)
        lo = np.asarray(WS.origin)
        hi = lo + WS.extent
        for p in scene:
            assert set(p.skeleton.joints.keys()) == set(CMU_JOINTS)
            for pos in p.skeleton.joints.values():
                assert (pos >= lo).all() and (pos <= hi).all()

    def test_pairwise_spacing(self):
        for seed in range(5):
            scene = generate_scene(np.random.default_rng(seed), 4, WS)
            axes = [(p.skeleton.joints["Neck"][0], p.skeleton.joints["Neck"][2])
                    for p in scene]
            for i in range(len(axes)):
                for j in range(i + 1, len(axes)):
                    d = np.hypot(axes[i][0] - axes[j][0], axes[i][1] - axes[j][1])
                    assert d >= 0.5

    def test_placement_failure_raises(self):
        with pytest.raises(RuntimeError, match="place"):
            generate_scene(np.random.default_rng(0), 50, WS)

    def test_capsule_surface_within_joint_hull(self):
        # segment ends are shrunk inward so the surface never rises above the
        # top joint and extends at most a few millimeters past the bounding
        # radius (sloped segments shrink along their own axis)
        scene = generate_scene(np.random.default_rng(2), 2, WS)
        for p in scene:
            cyl = skeleton_to_cylinder(p.skeleton, WS.ground_y)
            for cap in p.capsules:
                for end in (cap.p0, cap.p1):
                    assert end[1] + cap.radius <= cyl.top_y + 1e-9
                    d = np.hypot(end[0] - cyl.axis_x, end[2] - cyl.axis_z)
                    assert d + cap.radius <= cyl.radius + 5e-3


class TestRenderCamera:
    def test_budget_and_determinism(self):
        scene = generate_scene(np.random.default_rng(3), 2, WS)
        cam = default_cameras(WS)[0]
        a = render_camera(scene, cam, np.random.default_rng(9))
        b = render_camera(scene, cam, np.random.default_rng(9))
        assert len(a) == cam.budget
        assert np.array_equal(a.xyz, b.xyz)

    def test_empty_scene_renders_empty(self):
        cam = default_cameras(WS)[0]
        assert len(render_camera([], cam, np.random.default_rng(0))) == 0

    def test_noise_free_membership_oracle(self):
        # sigma=0: every point lies on some capsule surface, i.e. within its
        # radius of the (shrunk) capsule segment
        scene = generate_scene(np.random.default_rng(4), 1, WS)
        cam = VirtualCamera(position=(0.0, 1.8, 0.0), look_at=(2.0, 0.9, 1.5),
                            budget=800, sigma=0.0)
        cloud = render_camera(scene, cam, np.random.default_rng(1))
        caps = scene[0].capsules
        slack = np.min(np.stack([c.distance_to_segment(cloud.xyz) - c.radius
                                 for c in caps]), axis=0)
        assert slack.max() <= 1e-6

    def test_hemisphere_facing(self):
        # single spherical capsule: every sampled surface normal must face
        # the camera
        center = np.array([2.0, 1.0, 1.5])
        person = SyntheticPerson(
            skeleton=None,
            capsules=[Capsule(center.copy(), center.copy(), 0.2)])
        cam = VirtualCamera(position=(0.0, 1.8, 0.0), look_at=center,
                            budget=500, sigma=0.0)
        cloud = render_camera([person], cam, np.random.default_rng(2))
        normals = cloud.xyz.astype(np.float64) - center
        to_cam = cam.position - cloud.xyz.astype(np.float64)
        assert (np.einsum("ij,ij->i", normals, to_cam) > 0).all()

    def test_cylinder_containment_with_noise(self):
        # the trainability contract: >= 95% of a person's points fall in
        # their ground-truth cylinder at the default noise level
        rng = np.random.default_rng(5)
        for seed in range(3):
            scene = generate_scene(np.random.default_rng(seed), 1, WS)
            cams = default_cameras(WS)
            fused = fuse([render_camera(scene, c, rng) for c in cams])
            cyl = skeleton_to_cylinder(scene[0].skeleton, WS.ground_y)
            assert cyl.contains(fused.xyz).mean() >= 0.95

    def test_enough_points_per_person(self):
        rng = np.random.default_rng(6)
        scene = generate_scene(np.random.default_rng(11), 3, WS)
        cams = default_cameras(WS)
        fused = fuse([render_camera(scene, c, rng) for c in cams])
        for p in scene:
            cyl = skeleton_to_cylinder(p.skeleton, WS.ground_y)
            assert cyl.contains(fused.xyz).sum() >= 32


class TestApplyDropout:
    def test_p_zero_keeps_all(self):
        kept = apply_dropout([1, 2, 3, 4], 0.0, np.random.default_rng(0))
        assert kept == [1, 2, 3, 4]

    def test_p_one_keeps_exactly_one(self):
        for seed in range(10):
            kept = apply_dropout([1, 2, 3, 4], 1.0, np.random.default_rng(seed))
            assert len(kept) == 1

    def test_empirical_rate(self):
        rng = np.random.default_rng(1)
        dropped = 0
        trials = 10_000
        for _ in range(trials):
            dropped += 4 - len(apply_dropout([0, 1, 2, 3], 0.2, rng))
        rate = dropped / (4 * trials)
        assert abs(rate - 0.2) < 0.02

    def test_empty(self):
        assert apply_dropout([], 0.5, np.random.default_rng(0)) == []


class TestDefaultCameras:
    def test_four_at_corners(self):
        cams = default_cameras(WS)
        got = sorted((c.position[0], c.position[2]) for c in cams)
        assert got == [(0.0, 0.0), (0.0, 3.0), (4.0, 0.0), (4.0, 3.0)]
        assert all(c.position[1] == pytest.approx(1.8) for c in cams)

    def test_other_counts_on_ring(self):
        cams = default_cameras(WS, 6)
        assert len(cams) == 6
        for c in cams:
            assert 0.0 <= c.position[0] <= 4.0
            assert 0.0 <= c.position[2] <= 3.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            default_cameras(WS, 0)


class TestGenerateDataset:
    def test_files_and_manifest(self, tmp_path):
        out = tmp_path / "ds"
        man = generate_dataset(out, n_frames=3, persons_range=(1, 2), cameras=4,
                               dropout_p=0.0, seed=5, ws=WS)
        assert (out / "manifest.json").is_file()
        ws, joints, frames = read_dataset_manifest(out / "manifest.json")
        assert ws == WS
        assert joints == list(CMU_JOINTS)
        assert len(frames) == 3
        for fm in frames:
            assert len(fm.sensors) == 4
            for sid, rel in fm.sensors:
                cloud = read_cloud(out / rel)
                assert len(cloud) == 1500
            ann = json.loads((out / fm.annotation_path).read_text())
            assert 1 <= len(ann["persons"]) <= 2

    def test_regeneration_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_dataset(a, 2, (1, 2), 4, 0.3, seed=9, ws=WS)
        generate_dataset(b, 2, (1, 2), 4, 0.3, seed=9, ws=WS)
        for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_generation_dropout_removes_sensor_files(self, tmp_path):
        out = tmp_path / "ds"
        generate_dataset(out, 12, (1, 1), 4, dropout_p=0.5, seed=2, ws=WS)
        _, _, frames = read_dataset_manifest(out / "manifest.json")
        counts = [len(f.sensors) for f in frames]
        assert min(counts) >= 1
        assert any(c < 4 for c in counts)

    def test_bad_persons_range(self, tmp_path):
        with pytest.raises(ValueError, match="range"):
            generate_dataset(tmp_path / "x", 1, (3, 1), 4, 0.0, 0, WS)

    def test_fixed_person_count(self, tmp_path):
        out = tmp_path / "ds"
        generate_dataset(out, 2, (2, 2), 2, 0.0, 0, WS)
        _, _, frames = read_dataset_manifest(out / "manifest.json")
        for fm in frames:
            ann = json.loads((out / fm.annotation_path).read_text())
            assert len(ann["persons"]) == 2
