"""
Anatomy of the detector
=======================

Runs one frame through each network stage by hand -- voxel feature
encoding, volumetric aggregation, the two detection heads, decoding,
suppression -- then crops an instance and regresses its joints. Weights
are freshly initialized, so the detections are noise; the point is the
shapes and the flow.
"""

import numpy as np

from prcnn import (ModelConfig, Workspace, aggregate, build_voxel_tensor,
                   decode_detections, default_cameras, detection_heads,
                   encode_voxels, extract_instance_points, generate_scene,
                   init_weights, nms, pointnet_regress, positive_probability,
                   preprocess_frame, render_camera, skeleton_to_cylinder,
                   sphere_normalize)

rng = np.random.default_rng(3)
ws = Workspace()
cfg = ModelConfig()
weights = init_weights(cfg, seed=0)
n_params = sum(w.data.size for w in weights.values())
print(f"{len(weights)} weight tensors, {n_params:,} parameters")

# one frame, preprocessed exactly as in training
scene = generate_scene(rng, n_persons=1, ws=ws)
clouds = [render_camera(scene, cam, rng) for cam in default_cameras(ws, 4)]
cloud = preprocess_frame(clouds, ws, filter_cell=0.025)
vox = build_voxel_tensor(cloud, ws, cfg.t_budget, seed=0)

# stage 1: per-voxel features from the points inside each voxel,
# already laid out as a (channels, x, y, z) volume
features = encode_voxels(vox, weights, cfg)
print("voxel feature volume:", features.data.shape)

# stage 2: dense 3D aggregation over the grid (UNet with dense blocks)
context = aggregate(features, weights, cfg)
print("aggregated volume:", context.data.shape)

# stage 3: two 1x1x1 heads -- objectness logits and cylinder offsets
scores, reg = detection_heads(context, weights)
prob = positive_probability(scores.data.reshape(2, -1))
print(f"scores {scores.data.shape}, reg {reg.data.shape}, "
      f"max positive probability {prob.max():.3f}")

# decode every confident voxel into a world cylinder, then greedy NMS
dets = nms(decode_detections(scores.data.reshape(2, -1),
                             reg.data.reshape(4, -1), ws,
                             score_threshold=0.5), iou_threshold=0.3)
print(f"{len(dets)} detections survive suppression (untrained: arbitrary)")

# stage 4: joints for one instance, using the true cylinder for a stable
# crop since the detector above is untrained
cyl = skeleton_to_cylinder(scene[0].skeleton)
crop = extract_instance_points(cloud, cyl, rng, max_points=1024, min_points=32)
joints_norm = pointnet_regress(crop.points, weights, cfg).data
joints_world = joints_norm.astype(np.float64) * crop.scale + crop.center
print(f"crop of {crop.points.shape[1]} points -> {joints_world.shape[0]} joints")
print("first joint (world):", np.round(joints_world[0], 3))

# the crop normalizer maps the cylinder onto the unit sphere; its
# inverse is what lifted the prediction back to meters above
normed = sphere_normalize(cloud.xyz[:8], cyl)
print("normalized sample radius range:",
      np.round(np.linalg.norm(normed, axis=1).min(), 3), "-",
      np.round(np.linalg.norm(normed, axis=1).max(), 3))
