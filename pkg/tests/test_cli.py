"""CLI subcommands, exit codes, and the generate -> train -> eval -> infer chain."""

import json

import pytest

from prcnn.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset(workdir):
    out = workdir / "data"
    code = main(["generate", "--out", str(out), "--frames", "3",
                 "--persons", "1..2", "--cameras", "4", "--seed", "9",
                 "--budget", "500"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(workdir, dataset):
    ckpt = workdir / "model.prcw"
    code = main(["train", "--data", str(dataset), "--out", str(ckpt),
                 "--epochs", "1", "--seed", "4",
                 "--set", "n_inst=2", "--set", "train_crop_points=64",
                 "--set", "batch_size=3"])
    assert code == 0
    return ckpt


class TestChain:
    def test_generate_layout(self, dataset):
        assert (dataset / "manifest.json").is_file()
        manifest = json.loads((dataset / "manifest.json").read_text())
        assert len(manifest["frames"]) == 3
        frame = manifest["frames"][0]
        assert (dataset / frame["annotation_path"]).is_file()
        assert len(frame["sensors"]) == 4
        for sensor in frame["sensors"]:
            assert (dataset / sensor["cloud_path"]).is_file()

    def test_train_outputs(self, checkpoint, capsys):
        assert checkpoint.is_file()
        assert checkpoint.with_suffix(".log.jsonl").is_file()

    def test_train_progress_rows(self, workdir, dataset, capsys):
        ckpt = workdir / "p.prcw"
        assert main(["train", "--data", str(dataset), "--out", str(ckpt),
                     "--epochs", "1", "--set", "n_inst=1",
                     "--set", "train_crop_points=64",
                     "--set", "batch_size=3"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        row = json.loads(lines[0])
        assert row["epoch"] == 1 and "total" in row
        assert any("checkpoint:" in ln for ln in lines)

    def test_eval(self, workdir, dataset, checkpoint, capsys):
        report = workdir / "report.json"
        assert main(["eval", "--ckpt", str(checkpoint), "--data", str(dataset),
                     "--report", str(report)]) == 0
        doc = json.loads(report.read_text())
        assert set(doc) == {"ap", "per_joint", "mean", "curve", "counts"}
        out = capsys.readouterr().out
        assert "AP:" in out and "DIST:" in out

    def test_eval_drop_sensors(self, workdir, dataset, checkpoint):
        report = workdir / "report_drop.json"
        assert main(["eval", "--ckpt", str(checkpoint), "--data", str(dataset),
                     "--report", str(report), "--drop-sensors", "0,2"]) == 0
        assert report.is_file()

    def test_infer(self, workdir, dataset, checkpoint, capsys):
        manifest = json.loads((dataset / "manifest.json").read_text())
        frame_dir = dataset / "frames" / manifest["frames"][0]["frame_id"]
        out = workdir / "pred.json"
        assert main(["infer", "--ckpt", str(checkpoint),
                     "--frame", str(frame_dir / "frame.json"),
                     "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert set(doc) == {"frame_id", "detections"}
        assert doc["frame_id"] == "f0000"
        for det in doc["detections"]:
            assert set(det) == {"score", "cylinder", "joints"}
            assert set(det["cylinder"]) == {"axis_x", "axis_z", "top_y", "radius"}

    def test_infer_custom_joint_names(self, workdir, dataset, checkpoint):
        manifest = json.loads((dataset / "manifest.json").read_text())
        frame_dir = dataset / "frames" / manifest["frames"][0]["frame_id"]
        out = workdir / "pred_names.json"
        names = ",".join(f"n{i}" for i in range(11))
        assert main(["infer", "--ckpt", str(checkpoint),
                     "--frame", str(frame_dir / "frame.json"),
                     "--out", str(out), "--joint-names", names]) == 0
        doc = json.loads(out.read_text())
        named = [d for d in doc["detections"] if d["joints"] is not None]
        for det in named:
            assert set(det["joints"]) == set(names.split(","))

    def test_infer_wrong_joint_name_count(self, workdir, dataset, checkpoint):
        manifest = json.loads((dataset / "manifest.json").read_text())
        frame_dir = dataset / "frames" / manifest["frames"][0]["frame_id"]
        assert main(["infer", "--ckpt", str(checkpoint),
                     "--frame", str(frame_dir / "frame.json"),
                     "--out", str(workdir / "o.json"),
                     "--joint-names", "a,b,c"]) == 2


class TestUsageErrors:
    def test_bad_persons(self, workdir):
        assert main(["generate", "--out", str(workdir / "x"), "--frames", "1",
                     "--persons", "3..1"]) == 2
        assert main(["generate", "--out", str(workdir / "x"), "--frames", "1",
                     "--persons", "abc"]) == 2

    def test_bad_dropout(self, workdir):
        assert main(["generate", "--out", str(workdir / "x"), "--frames", "1",
                     "--dropout", "1.5"]) == 2

    def test_bad_frames(self, workdir):
        assert main(["generate", "--out", str(workdir / "x"),
                     "--frames", "0"]) == 2

    def test_unknown_set_key(self, dataset, workdir):
        assert main(["train", "--data", str(dataset),
                     "--out", str(workdir / "x.prcw"), "--epochs", "1",
                     "--set", "bogus=1"]) == 2

    def test_malformed_set(self, dataset, workdir):
        assert main(["train", "--data", str(dataset),
                     "--out", str(workdir / "x.prcw"), "--epochs", "1",
                     "--set", "n_inst"]) == 2

    def test_missing_epochs(self, dataset, workdir):
        assert main(["train", "--data", str(dataset),
                     "--out", str(workdir / "x.prcw")]) == 2

    def test_bad_config_file(self, dataset, workdir):
        cfg = workdir / "bad.cfg"
        cfg.write_text("nonsense = 1\n")
        assert main(["train", "--data", str(dataset),
                     "--out", str(workdir / "x.prcw"), "--epochs", "1",
                     "--config", str(cfg)]) == 2

    def test_bad_drop_sensors(self, workdir, dataset, checkpoint):
        assert main(["eval", "--ckpt", str(checkpoint), "--data", str(dataset),
                     "--report", str(workdir / "r.json"),
                     "--drop-sensors", "a,b"]) == 2

    def test_argparse_errors_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["generate"])  # missing required flags
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0


class TestRuntimeErrors:
    def test_missing_checkpoint(self, workdir, dataset):
        assert main(["eval", "--ckpt", str(workdir / "nope.prcw"),
                     "--data", str(dataset),
                     "--report", str(workdir / "r.json")]) == 1

    def test_missing_dataset(self, workdir, checkpoint):
        assert main(["eval", "--ckpt", str(checkpoint),
                     "--data", str(workdir / "nodata"),
                     "--report", str(workdir / "r.json")]) == 1

    def test_missing_frame_manifest(self, workdir, checkpoint):
        assert main(["infer", "--ckpt", str(checkpoint),
                     "--frame", str(workdir / "nope.json"),
                     "--out", str(workdir / "o.json")]) == 1

    def test_missing_config_file(self, workdir, dataset):
        assert main(["train", "--data", str(dataset),
                     "--out", str(workdir / "x.prcw"), "--epochs", "1",
                     "--config", str(workdir / "nope.cfg")]) == 1

    def test_corrupt_checkpoint(self, workdir, dataset):
        bad = workdir / "corrupt.prcw"
        bad.write_bytes(b"not a checkpoint")
        assert main(["eval", "--ckpt", str(bad), "--data", str(dataset),
                     "--report", str(workdir / "r.json")]) == 1


class TestConfigPrecedence:
    def test_flag_overrides_config_file(self, workdir, dataset):
        cfg = workdir / "run.cfg"
        cfg.write_text("epochs = 5\nn_inst = 1\ntrain_crop_points = 64\n"
                       "batch_size = 3\n")
        ckpt = workdir / "prec.prcw"
        assert main(["train", "--data", str(dataset), "--out", str(ckpt),
                     "--config", str(cfg), "--epochs", "1"]) == 0
        rows = [json.loads(ln) for ln in
                ckpt.with_suffix(".log.jsonl").read_text().splitlines()]
        assert len(rows) == 1  # --epochs beat the file's 5
