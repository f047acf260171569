"""Flat key = value run configuration.

One file configures workspace geometry, model size, training, and inference
thresholds. Values resolve in three layers: built-in defaults, then the
config file, then command-line overrides. Keys without a built-in default
(currently `epochs`) must come from one of the explicit layers.
"""

from __future__ import annotations

from dataclasses import dataclass

from .network import ModelConfig
from .pointcloud import Workspace

# every supported key; None marks "no default, must be provided to be used"
CONFIG_DEFAULTS = {
    # workspace geometry
    "origin": "0 0 0",
    "voxel_size": "0.25 0.25 0.25",
    "grid": "16 8 12",
    "filter_cell": "0.025",
    # model
    "t_budget": "64",
    "unet_depth": "2",
    # training
    "epochs": None,
    "mode": "end_to_end",
    "lambda": "1.0",
    "lambda2": "1.0",
    "batch_size": "4",
    "learning_rate": "0.001",
    "seed": "0",
    "n_inst": "32",
    "dropout_p": "0.2",
    "train_crop_points": "512",
    # inference
    "score_threshold": "0.5",
    "nms_iou": "0.3",
    "min_instance_points": "32",
    "max_instance_points": "1024",
}


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; '#' starts a comment, blanks are skipped."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_DEFAULTS:
            raise ValueError(f"config line {lineno}: unknown key '{key}'")
        if key in values:
            raise ValueError(f"config line {lineno}: duplicate key '{key}'")
        if not value:
            raise ValueError(f"config line {lineno}: key '{key}' has no value")
        values[key] = value
    return values


def load_config_file(path) -> dict:
    with open(path) as f:
        return parse_config_text(f.read())


def resolve_config(file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults <- config file <- CLI overrides. Unknown keys are rejected."""
    resolved = dict(CONFIG_DEFAULTS)
    for layer in (file_values or {}), (overrides or {}):
        for key, value in layer.items():
            if key not in CONFIG_DEFAULTS:
                raise ValueError(f"unknown config key '{key}'")
            if value is not None:
                resolved[key] = str(value)
    return resolved


def require_key(cfg: dict, key: str) -> str:
    value = cfg.get(key)
    if value is None:
        raise ValueError(f"missing config key: {key}")
    return value


def _floats(cfg, key, n) -> tuple:
    parts = require_key(cfg, key).split()
    if len(parts) != n:
        raise ValueError(f"config key '{key}' needs {n} values, got {len(parts)}")
    return tuple(float(p) for p in parts)


def _ints(cfg, key, n=None) -> tuple:
    parts = require_key(cfg, key).split()
    if n is not None and len(parts) != n:
        raise ValueError(f"config key '{key}' needs {n} values, got {len(parts)}")
    return tuple(int(p) for p in parts)


def build_workspace(cfg: dict) -> Workspace:
    return Workspace(origin=_floats(cfg, "origin", 3),
                     voxel_size=_floats(cfg, "voxel_size", 3),
                     counts=_ints(cfg, "grid", 3))


def build_model_config(cfg: dict, joint_count: int) -> ModelConfig:
    return ModelConfig(
        grid=_ints(cfg, "grid", 3),
        t_budget=int(require_key(cfg, "t_budget")),
        unet_depth=int(require_key(cfg, "unet_depth")),
        joint_count=int(joint_count),
        min_instance_points=int(require_key(cfg, "min_instance_points")),
        max_instance_points=int(require_key(cfg, "max_instance_points")),
    )


@dataclass(frozen=True)
class PipelineConfig:
    """Pre/post-processing knobs shared by training and inference."""

    filter_cell: float = 0.025
    score_threshold: float = 0.5
    nms_iou: float = 0.3
    min_instance_points: int = 32
    max_instance_points: int = 1024


def build_pipeline_config(cfg: dict) -> PipelineConfig:
    return PipelineConfig(
        filter_cell=float(require_key(cfg, "filter_cell")),
        score_threshold=float(require_key(cfg, "score_threshold")),
        nms_iou=float(require_key(cfg, "nms_iou")),
        min_instance_points=int(require_key(cfg, "min_instance_points")),
        max_instance_points=int(require_key(cfg, "max_instance_points")),
    )
