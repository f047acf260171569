"""Point-cloud human detection and joint regression toolkit.

Multi-sensor point clouds are fused into a shared workspace, voxelized, and
encoded by a small voxel-feature network; a dense 3D U-Net scores each voxel
for person presence and regresses a bounding cylinder; per-instance point
crops then regress body-joint positions. Includes a synthetic multi-camera
data generator, training loops, evaluation metrics, and a CLI.
"""

import os as _os

# PRCNN_THREADS caps BLAS worker threads; must be set before numpy loads.
_threads = _os.environ.get("PRCNN_THREADS")
if _threads:
    try:
        if int(_threads) < 1:
            raise ValueError
        for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            _os.environ.setdefault(_var, _threads)
    except ValueError:
        import warnings as _warnings
        _warnings.warn(f"ignoring PRCNN_THREADS={_threads!r}: not a positive integer")

__version__ = "0.1.0"

from .config import PipelineConfig, load_config_file, resolve_config
from .evaluate import evaluate_dataset, run_frame_inference
from .instance import (Detection, InstanceCrop, decode_detections,
                       denormalize_joints, extract_instance_points,
                       inference_result, nms, positive_probability,
                       sphere_normalize, write_inference_result)
from .metrics import (EvalReport, average_precision, build_report,
                      cylinder_iou, joint_metrics, match_detections,
                      write_report)
from .network import (ModelConfig, aggregate, detection_heads, encode_voxels,
                      forward_detection, init_weights, load_weights,
                      pointnet_regress, read_checkpoint, weight_shapes,
                      write_checkpoint)
from .pointcloud import (FrameManifest, PointCloud, Workspace, crop_workspace,
                         fuse, load_frame_clouds, read_cloud,
                         read_frame_manifest, voxel_grid_filter, write_cloud)
from .synthdata import (VirtualCamera, apply_dropout, default_cameras,
                        generate_dataset, generate_scene,
                        read_dataset_manifest, render_camera)
from .targets import (CMU_JOINTS, MVOR_JOINTS, Cylinder, Skeleton,
                      assign_voxel_targets, decode_cylinder, encode_cylinder,
                      read_annotation, skeleton_to_cylinder, write_annotation)
from .training import (TrainConfig, TrainingData, load_training_data,
                       preprocess_frame, train, train_config_from_dict)
from .voxelizer import VoxelizedFrame, build_voxel_tensor
