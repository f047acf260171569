"""Full-pipeline inference and dataset-level evaluation."""

import numpy as np
import pytest

from prcnn.config import PipelineConfig
from prcnn.evaluate import evaluate_dataset, run_frame_inference
from prcnn.network import ModelConfig, init_weights
from prcnn.pointcloud import Workspace
from prcnn.synthdata import default_cameras, generate_dataset, generate_scene, render_camera
from prcnn.training import TrainConfig, load_training_data, train

PIPE = PipelineConfig(filter_cell=0.025, score_threshold=0.5, nms_iou=0.3,
                      min_instance_points=32, max_instance_points=1024)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A briefly trained model on a small dataset; enough signal for smoke
    checks without chasing accuracy."""
    out = tmp_path_factory.mktemp("eval") / "data"
    ws = Workspace()
    cams = default_cameras(ws, 4, budget=600)
    generate_dataset(out, n_frames=5, persons_range=(1, 2), cameras=cams,
                     dropout_p=0.0, seed=21, ws=ws)
    data = load_training_data(out)
    mc = ModelConfig()
    cfg = TrainConfig(epochs=6, batch_size=2, seed=3, n_inst=4,
                      train_crop_points=256)
    res = train(data, mc, cfg, tmp_path_factory.mktemp("ckpt") / "m.prcw")
    return out, res.weights, mc, data


class TestFrameInference:
    def test_structure(self, trained):
        _, weights, mc, data = trained
        ws = data.workspace
        rng = np.random.default_rng(0)
        dets, joints = run_frame_inference(data.frames[0].clouds, weights,
                                           mc, ws, PIPE, rng)
        assert len(dets) == len(joints)
        for det, pred in zip(dets, joints):
            assert 0.0 <= det.score <= 1.0
            assert pred is None or pred.shape == (mc.joint_count, 3)

    def test_untrained_weights_still_run(self, trained):
        _, _, mc, data = trained
        weights = init_weights(mc, seed=0)
        dets, joints = run_frame_inference(data.frames[0].clouds, weights,
                                           mc, data.workspace, PIPE,
                                           np.random.default_rng(0))
        assert len(dets) == len(joints)

    def test_empty_frame(self, trained):
        _, weights, mc, data = trained
        dets, joints = run_frame_inference([], weights, mc, data.workspace,
                                           PIPE, np.random.default_rng(0))
        assert dets == [] and joints == []


class TestEvaluateDataset:
    def test_smoke_report(self, trained):
        out, weights, mc, _ = trained
        report = evaluate_dataset(out, weights, mc, PIPE, seed=0)
        assert report.n_gt > 0
        assert report.ap is None or 0.0 <= report.ap <= 1.0
        doc = report.to_dict()
        assert set(doc) == {"ap", "per_joint", "mean", "curve", "counts"}
        assert doc["counts"]["gt"] == report.n_gt

    def test_deterministic(self, trained):
        out, weights, mc, _ = trained
        a = evaluate_dataset(out, weights, mc, PIPE, seed=0)
        b = evaluate_dataset(out, weights, mc, PIPE, seed=0)
        assert a.to_dict() == b.to_dict()

    def test_drop_sensors(self, trained):
        out, weights, mc, _ = trained
        report = evaluate_dataset(out, weights, mc, PIPE, drop_sensors=(0,),
                                  seed=0)
        assert report.n_gt > 0  # ground truth unaffected by camera loss

    def test_grid_mismatch(self, trained):
        out, weights, _, _ = trained
        bad = ModelConfig(grid=(8, 8, 8))
        with pytest.raises(ValueError, match="grid"):
            evaluate_dataset(out, weights, bad, PIPE)

    def test_joint_count_mismatch(self, trained):
        out, weights, _, _ = trained
        bad = ModelConfig(joint_count=8)
        with pytest.raises(ValueError, match="joints"):
            evaluate_dataset(out, weights, bad, PIPE)
