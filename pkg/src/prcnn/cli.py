"""Command-line entry points: generate, train, eval, infer.

Exit codes: 0 success, 1 runtime failure (missing/corrupt files, training
errors), 2 usage errors (bad flags, invalid ranges, malformed config).
All inputs are validated before any output file is created.

The PRCNN_THREADS environment variable caps BLAS worker threads; it is
applied at package import, before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


class UsageError(Exception):
    """Invalid arguments or configuration; maps to exit code 2."""


def _parse_persons(text: str):
    """Accept 'MIN..MAX' or a single count."""
    parts = text.split("..")
    try:
        if len(parts) == 1:
            lo = hi = int(parts[0])
        elif len(parts) == 2:
            lo, hi = int(parts[0]), int(parts[1])
        else:
            raise ValueError
    except ValueError:
        raise UsageError(f"--persons expects MIN..MAX or a count, got '{text}'")
    if lo < 0 or lo > hi:
        raise UsageError(f"invalid persons range {lo}..{hi}")
    return lo, hi


def _parse_sensor_list(text: str):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip() != "")
    except ValueError:
        raise UsageError(f"--drop-sensors expects comma-separated ids, got '{text}'")


def _load_run_config(args, overrides=None) -> dict:
    from .config import load_config_file, resolve_config
    file_values = None
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            file_values = load_config_file(path)
        except ValueError as e:
            raise UsageError(str(e))
    try:
        return resolve_config(file_values, overrides)
    except ValueError as e:
        raise UsageError(str(e))


def _joint_names_for(count: int, override=None):
    from .targets import CMU_JOINTS, MVOR_JOINTS
    if override:
        names = [n.strip() for n in override.split(",") if n.strip()]
        if len(names) != count:
            raise UsageError(f"--joint-names lists {len(names)} names, "
                             f"checkpoint regresses {count} joints")
        return names
    if count == len(CMU_JOINTS):
        return list(CMU_JOINTS)
    if count == len(MVOR_JOINTS):
        return list(MVOR_JOINTS)
    return [f"j{i:02d}" for i in range(count)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    persons = _parse_persons(args.persons)
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    if args.cameras < 1:
        raise UsageError("--cameras must be >= 1")
    if not 0.0 <= args.dropout <= 1.0:
        raise UsageError("--dropout must be in [0, 1]")
    if args.sigma < 0:
        raise UsageError("--sigma must be >= 0")
    if args.budget < 1:
        raise UsageError("--budget must be >= 1")

    from .config import build_workspace
    from .synthdata import default_cameras, generate_dataset
    cfg = _load_run_config(args)
    ws = build_workspace(cfg)
    cams = default_cameras(ws, args.cameras, budget=args.budget, sigma=args.sigma)
    manifest = generate_dataset(args.out, args.frames, persons, cams,
                                args.dropout, args.seed, ws)
    stats = manifest["_stats"]
    print(f"wrote {len(manifest['frames'])} frames to {args.out} "
          f"({stats['persons']} persons, {stats['points']} points)")
    return 0


def cmd_train(args) -> int:
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip() or not value.strip():
            raise UsageError(f"--set expects key=value, got '{item}'")
        overrides[key.strip()] = value.strip()
    for key in ("mode", "epochs", "seed"):
        if getattr(args, key, None) is not None:
            overrides[key] = str(getattr(args, key))
    cfg = _load_run_config(args, overrides)

    data_dir = Path(args.data)
    if not (data_dir / "manifest.json").is_file():
        raise FileNotFoundError(f"no dataset manifest in {data_dir}")

    from .config import build_model_config
    from .training import load_training_data, train, train_config_from_dict
    try:
        train_cfg = train_config_from_dict(cfg)
    except ValueError as e:
        raise UsageError(str(e))
    data = load_training_data(data_dir)
    model_cfg = build_model_config(cfg, joint_count=len(data.joint_names))

    def progress(row):
        print(json.dumps(row))

    result = train(data, model_cfg, train_cfg, args.out, progress=progress)
    print(f"checkpoint: {result.checkpoint_path}")
    if result.detector_checkpoint_path:
        print(f"detector checkpoint: {result.detector_checkpoint_path}")
    print(f"metrics log: {result.log_path}")
    return 0


def cmd_eval(args) -> int:
    drop = _parse_sensor_list(args.drop_sensors) if args.drop_sensors else ()
    cfg = _load_run_config(args)
    ckpt = Path(args.ckpt)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    data_dir = Path(args.data)
    if not (data_dir / "manifest.json").is_file():
        raise FileNotFoundError(f"no dataset manifest in {data_dir}")

    from .config import build_model_config, build_pipeline_config
    from .evaluate import evaluate_dataset
    from .metrics import write_report
    from .network import load_weights
    from .synthdata import read_dataset_manifest
    ws, joint_names, _ = read_dataset_manifest(data_dir / "manifest.json")
    cfg["grid"] = " ".join(str(c) for c in ws.counts)
    model_cfg = build_model_config(cfg, joint_count=len(joint_names))
    weights = load_weights(ckpt, model_cfg)
    report = evaluate_dataset(data_dir, weights, model_cfg,
                              build_pipeline_config(cfg),
                              drop_sensors=drop, seed=args.seed)
    write_report(args.report, report)
    ap = "n/a" if report.ap is None else f"{report.ap:.4f}"
    dist = "n/a" if report.mean_dist_cm is None else f"{report.mean_dist_cm:.2f} cm"
    acc = "n/a" if report.mean_acc_pct is None else f"{report.mean_acc_pct:.1f}%"
    print(f"AP: {ap}  mean DIST: {dist}  mean ACC: {acc} "
          f"({report.n_tp}/{report.n_det} detections matched, {report.n_gt} gt)")
    print(f"report: {args.report}")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_run_config(args)
    ckpt = Path(args.ckpt)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    frame_path = Path(args.frame)
    if not frame_path.is_file():
        raise FileNotFoundError(f"frame manifest not found: {frame_path}")

    import numpy as np

    from .config import (build_model_config, build_pipeline_config,
                         build_workspace)
    from .evaluate import run_frame_inference
    from .instance import inference_result, write_inference_result
    from .network import load_weights, read_checkpoint
    from .pointcloud import load_frame_clouds, read_frame_manifest
    raw = read_checkpoint(ckpt)
    if "pn_out.b" not in raw or raw["pn_out.b"].size % 3:
        raise ValueError(f"{ckpt}: cannot determine joint count")
    joint_count = raw["pn_out.b"].size // 3
    joint_names = _joint_names_for(joint_count, args.joint_names)

    ws = build_workspace(cfg)
    model_cfg = build_model_config(cfg, joint_count=joint_count)
    weights = load_weights(ckpt, model_cfg)
    manifest = read_frame_manifest(frame_path)
    clouds = load_frame_clouds(manifest, frame_path.parent)
    dets, joints = run_frame_inference(clouds, weights, model_cfg, ws,
                                       build_pipeline_config(cfg),
                                       np.random.default_rng(args.seed))
    doc = inference_result(manifest.frame_id, dets, joints, joint_names)
    write_inference_result(args.out, doc)
    print(f"frame {manifest.frame_id}: {len(dets)} detections -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prcnn",
        description="Point-cloud human detection and joint regression toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic multi-camera dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--frames", type=int, required=True, help="number of frames")
    p.add_argument("--persons", default="1..3",
                   help="persons per frame as MIN..MAX (default 1..3)")
    p.add_argument("--cameras", type=int, default=4,
                   help="camera count (default 4, placed at the workspace corners)")
    p.add_argument("--dropout", type=float, default=0.0,
                   help="per-camera failure probability baked into the dataset")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.add_argument("--sigma", type=float, default=0.01,
                   help="sensor noise standard deviation in meters")
    p.add_argument("--budget", type=int, default=1500,
                   help="surface points per camera per frame")
    p.add_argument("--config", help="key=value config file (workspace geometry)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--mode", choices=("end_to_end", "staged"),
                   help="override the training mode")
    p.add_argument("--epochs", type=int, help="override the epoch count")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--report", required=True, help="output report JSON path")
    p.add_argument("--drop-sensors", metavar="IDS",
                   help="comma-separated sensor ids to drop (camera-failure test)")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for instance-crop subsampling")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run inference on one frame manifest")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--frame", required=True,
                   help="frame manifest JSON (cloud paths resolve relative to it)")
    p.add_argument("--out", required=True, help="output JSON path")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--joint-names", metavar="NAMES",
                   help="comma-separated joint names for the output")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for instance-crop subsampling")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
