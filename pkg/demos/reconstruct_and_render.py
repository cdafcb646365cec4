"""
Fit a splat map to three RGB-D views and render novel views
===========================================================

A random tabletop scene is ray traced from three neighbouring viewpoints on a
quarter sphere. Those frames are the only input to the splat map. The map is
then rendered from sixteen nearby viewpoints it never saw and compared with
the ray-traced ground truth.
"""

import math
import sys
from pathlib import Path

import numpy as np

from nvsgrasp import io
from nvsgrasp.geometry import PinholeCamera
from nvsgrasp.imetrics import evaluate_frame
from nvsgrasp.splatmap import OptimizationConfig, fit_scene, render
from nvsgrasp.synthscene import random_scene, raytrace
from nvsgrasp.views import quarter_sphere_grid, sample_novel_views, select_real_views

size = int(sys.argv[1]) if len(sys.argv) > 1 else 256
out = Path("demo_output/reconstruct")
out.mkdir(parents=True, exist_ok=True)

# nine primitives on a table, and a 16 x 16 grid of cameras looking at it
scene = random_scene(9, seed=4)
grid = quarter_sphere_grid(PinholeCamera.from_fov(size, size, 45.0), 16, 16, radius=0.6)

# three adjacent real views on one ring, sixteen novel views around them
real = select_real_views(grid, 3, start=134, n_azimuth=16)
novel = sample_novel_views(real, 16, math.radians(10), math.radians(7.5), 0.05, seed=0)
print(f"{len(real)} real views, {len(novel)} novel views, {size}x{size} px")

keyframes = [(raytrace(scene, cam), cam) for cam in real]
smap = fit_scene(keyframes, OptimizationConfig(iterations=60))
print(f"splat map: {len(smap)} isotropic splats")
smap.save_ply(out / "splats.ply")

for role, cams in (("real", real), ("novel", novel)):
    rows = []
    for i, cam in enumerate(cams):
        gt = raytrace(scene, cam)
        r = render(smap, cam)
        rows.append(evaluate_frame(r.color, gt.color, r.depth, gt.depth))
        if i < 3:
            io.write_color_png(out / f"{role}_{i}_render.png", r.color)
            io.write_color_png(out / f"{role}_{i}_truth.png", gt.color)
    print(f"{role:>5}: PSNR {np.mean([m.psnr for m in rows]):6.2f} dB  "
          f"MS-SSIM {np.mean([m.ms_ssim for m in rows]):.4f}  "
          f"depth L1 {np.mean([m.depth_l1 for m in rows]):.4f} m")

print(f"renders written to {out}/")
