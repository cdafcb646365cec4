"""
Pose-NMS against clustering on a synthetic grasp set
====================================================

Grasps bunched around three poses, seen from four views. Pose-NMS keeps
the best grasp and drops neighbours that are close in both translation
and rotation. Clustering first keeps the top half by score. It then groups
grasps around founders, keeps the best grasp per view in each group, and
finally keeps one grasp per group.
"""

import numpy as np

from nvsgrasp.geometry import axis_angle_matrix, random_rotation
from nvsgrasp.graspgen import GraspSet
from nvsgrasp.graspost import ClusterParams, NmsParams, cluster_filter, pose_nms, run_branches

rng = np.random.default_rng(0)
centers = [random_rotation(rng) for _ in range(3)]
k = rng.integers(0, 3, 60)
rotations = np.stack([centers[j] @ axis_angle_matrix(rng.normal(size=3), rng.uniform(0, 0.3)) for j in k])
translations = rng.uniform(-0.05, 0.05, (3, 3))[k] + rng.normal(scale=0.01, size=(60, 3))
real = GraspSet(rotations[:20], translations[:20], np.full(20, 0.04), rng.random(20),
                rng.integers(0, 3, 20), ["real"] * 20, "G_real")
nvs = GraspSet(rotations[20:], translations[20:], np.full(40, 0.04), rng.random(40),
               rng.integers(3, 19, 40), ["nvs"] * 40, "G_nvs")

print("pose-NMS keeps", len(pose_nms(real, NmsParams())), "of", len(real), "real grasps")
print("clustering keeps", len(cluster_filter(real, ClusterParams())), "of", len(real))

branches = run_branches(real, nvs)
for (branch, tag), gs in branches.items():
    print(f"{branch:<8} {tag:<11} {len(gs):3d} grasps")
