"""End-to-end pipeline over a run directory.

Stages, each reading its inputs from and writing its outputs to the run
directory so any of them can be re-run on its own:

    scene-gen    scene.json, views.json, gt/ (posed ground-truth frames)
    fit          splats.ply, fit.json
    render       renders/*.npz (+ PNG previews), metrics.json
    propose      grasps/<role>_<id>.json, grasps/G_real.json, grasps/G_nvs.json
    postprocess  branches/<branch>_<tag>.json
    evaluate     report.json
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import io
from .geometry import PinholeCamera, depth_normals, unproject
from .graspeval import FrictionSweep, evaluate_branches, nvs_gain_stats
from .graspgen import GraspSet, GripperSpec, concatenate, import_grasps, propose_antipodal
from .graspost import BRANCHES, TAG_ORDER, ClusterParams, NmsParams, run_branches
from .imetrics import evaluate_frame
from .splatmap import OptimizationConfig, SplatMap, fit_scene, render
from .synthscene import SceneSpec, random_scene, raytrace
from .views import quarter_sphere_grid, sample_novel_views, select_real_views

log = logging.getLogger(__name__)

STAGES = ("scene-gen", "fit", "render", "propose", "postprocess", "evaluate")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


@dataclass
class PipelineConfig:
    m: int = 3
    n: int = 16
    seed: int = 0
    scene_id: Optional[str] = None
    n_objects: int = 9
    scene_path: Optional[str] = None    # existing SceneSpec JSON instead of a random scene
    frames_dir: Optional[str] = None    # external posed frames instead of synthetic ones
    width: int = 64
    height: int = 64
    fov_deg: float = 45.0
    grid_azimuth: int = 16
    grid_elevation: int = 16
    radius: float = 0.6
    real_start: int = 134               # ring 8 of 16, azimuth columns 6..8
    max_az_offset_deg: float = 10.0
    max_el_offset_deg: float = 7.5
    max_radius_offset: float = 0.05
    optimization: OptimizationConfig = field(default_factory=lambda: OptimizationConfig(iterations=60))
    nms: NmsParams = field(default_factory=NmsParams)
    cluster: ClusterParams = field(default_factory=ClusterParams)
    friction: FrictionSweep = field(default_factory=FrictionSweep)
    gripper: GripperSpec = field(default_factory=GripperSpec)
    n_samples: int = 4096
    mu_sample: float = 0.4
    min_silhouette: float = 0.5
    stride: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m (real views) must be >= 1")
        if self.n < 0:
            raise ValueError("n (novel views) must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def name(self) -> str:
        return self.scene_id or f"scene_{self.seed:04d}"

    def intrinsics(self) -> PinholeCamera:
        return PinholeCamera.from_fov(self.width, self.height, self.fov_deg)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["friction"] = {"coefficients": list(self.friction.coefficients)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        nested = {"optimization": OptimizationConfig, "nms": NmsParams, "cluster": ClusterParams,
                  "gripper": GripperSpec}
        for key, typ in nested.items():
            if key in d and isinstance(d[key], dict):
                d[key] = typ(**d[key])
        if "friction" in d and isinstance(d["friction"], dict):
            d["friction"] = FrictionSweep(tuple(d["friction"]["coefficients"]))
        elif "friction" in d and isinstance(d["friction"], (list, tuple)):
            d["friction"] = FrictionSweep(tuple(d["friction"]))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def save_config(cfg: PipelineConfig, out: Path) -> None:
    io.dump_json(cfg.to_dict(), Path(out) / "config.json")


def load_config(out: Path) -> PipelineConfig:
    return PipelineConfig.from_dict(io.load_json(Path(out) / "config.json"))


def _pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# views


def make_views(cfg: PipelineConfig) -> List[io.View]:
    grid = quarter_sphere_grid(cfg.intrinsics(), cfg.grid_azimuth, cfg.grid_elevation, cfg.radius)
    real = select_real_views(grid, cfg.m, cfg.real_start, cfg.grid_azimuth)
    novel = sample_novel_views(real, cfg.n, math.radians(cfg.max_az_offset_deg),
                               math.radians(cfg.max_el_offset_deg), cfg.max_radius_offset,
                               seed=cfg.seed)
    views = [io.View(i, "real", c) for i, c in enumerate(real)]
    views += [io.View(cfg.m + j, "novel", c) for j, c in enumerate(novel)]
    return views


# ---------------------------------------------------------------------------
# stages


def stage_scene_gen(cfg: PipelineConfig, out: Path) -> SceneSpec:
    out.mkdir(parents=True, exist_ok=True)
    if cfg.scene_path:
        scene = io.load_scene(cfg.scene_path)
    else:
        scene = random_scene(cfg.n_objects, seed=cfg.seed)
    views = make_views(cfg)
    io.save_scene(out / "scene.json", scene)
    io.save_views(out / "views.json", views)
    frames = _pool_map(lambda v: raytrace(scene, v.camera), views, cfg.workers)
    io.save_frames(out / "gt", views, frames)
    return scene


def _real_keyframes(cfg: PipelineConfig, out: Path):
    src = Path(cfg.frames_dir) if cfg.frames_dir else out / "gt"
    frames = io.load_frames(src, role="real")
    if not frames:
        raise StageError("fit", f"no real frames in {src}")
    return [(fr, v.camera) for v, fr in frames]


def stage_fit(cfg: PipelineConfig, out: Path) -> SplatMap:
    keyframes = _real_keyframes(cfg, out)
    smap = fit_scene(keyframes, cfg.optimization)
    smap.save_ply(out / "splats.ply")
    io.dump_json({"n_splats": len(smap), "n_keyframes": len(keyframes),
                  "optimization": cfg.optimization.to_dict()}, out / "fit.json")
    return smap


def _views_for_run(cfg: PipelineConfig, out: Path) -> List[io.View]:
    path = out / "views.json"
    if path.exists():
        return io.load_views(path)
    if cfg.frames_dir:
        return [v for v, _ in io.load_frames(cfg.frames_dir)]
    raise io.MissingArtifactError(f"missing artifact: {path}")


def stage_render(cfg: PipelineConfig, out: Path) -> dict:
    smap = SplatMap.load_ply(_need(out / "splats.ply"))
    views = _views_for_run(cfg, out)
    rdir = out / "renders"
    rdir.mkdir(exist_ok=True)
    gt_dir = Path(cfg.frames_dir) if cfg.frames_dir else out / "gt"
    gt = {}
    if (gt_dir / io.FRAMES_INDEX).exists():
        gt = {v.view_id: fr for v, fr in io.load_frames(gt_dir)}

    def work(view: io.View):
        r = render(smap, view.camera)
        stem = f"{view.role}_{view.view_id:03d}"
        np.savez_compressed(rdir / f"{stem}.npz", color=r.color, depth=r.depth, silhouette=r.silhouette)
        io.write_color_png(rdir / f"{stem}_color.png", r.color)
        io.write_depth_png(rdir / f"{stem}_depth.png", r.depth)
        if view.view_id in gt:
            g = gt[view.view_id]
            return stem, evaluate_frame(r.color, g.color, r.depth, g.depth).to_dict()
        return stem, None

    results = _pool_map(work, views, cfg.workers)
    metrics = {"per_view": {stem: m for stem, m in results if m is not None}}
    for role in ("real", "novel"):
        rows = [m for (stem, m) in results if m is not None and stem.startswith(role)]
        if rows:
            metrics[f"mean_{role}"] = {k: float(np.mean([r[k] for r in rows]))
                                       for k in ("psnr", "ms_ssim", "depth_l1")}
    io.dump_json(metrics, out / "metrics.json")
    return metrics


def _need(path: Path) -> Path:
    if not path.exists():
        raise io.MissingArtifactError(f"missing artifact: {path}")
    return path


def view_cloud(view: io.View, color, depth, silhouette, cfg: PipelineConfig):
    depth = np.where(silhouette >= cfg.min_silhouette, depth, 0.0)
    normals = depth_normals(depth, view.camera)
    return unproject(depth, view.camera, color=color, stride=cfg.stride, normals=normals)


def stage_propose(cfg: PipelineConfig, out: Path) -> Dict[str, GraspSet]:
    views = _views_for_run(cfg, out)
    gdir = out / "grasps"
    gdir.mkdir(exist_ok=True)

    def work(view: io.View) -> GraspSet:
        stem = f"{view.role}_{view.view_id:03d}"
        data = np.load(_need(out / "renders" / f"{stem}.npz"))
        cloud = view_cloud(view, data["color"], data["depth"], data["silhouette"], cfg)
        gs = propose_antipodal(cloud, cfg.gripper, cfg.n_samples, cfg.mu_sample,
                               seed=[cfg.seed, view.view_id], view_id=view.view_id,
                               source="real" if view.role == "real" else "nvs")
        gs.save(gdir / f"{stem}.json")
        return gs

    per_view = _pool_map(work, views, cfg.workers)
    g_real = concatenate([g for v, g in zip(views, per_view) if v.role == "real"], "G_real")
    g_nvs = concatenate([g for v, g in zip(views, per_view) if v.role == "novel"], "G_nvs")
    g_real.save(gdir / "G_real.json")
    g_nvs.save(gdir / "G_nvs.json")
    return {"G_real": g_real, "G_nvs": g_nvs}


def stage_postprocess(cfg: PipelineConfig, out: Path):
    g_real = import_grasps(_need(out / "grasps" / "G_real.json"))
    g_nvs = import_grasps(_need(out / "grasps" / "G_nvs.json"))
    g_real = g_real if g_real.tag == "G_real" else g_real.retag("G_real")
    g_nvs = g_nvs if g_nvs.tag == "G_nvs" else g_nvs.retag("G_nvs")
    branches = run_branches(g_real, g_nvs, cfg.nms, cfg.cluster)
    bdir = out / "branches"
    bdir.mkdir(exist_ok=True)
    for (branch, tag), gs in branches.items():
        gs.save(bdir / f"{branch}_{tag}.json")
    return branches


def load_branches(out: Path) -> Dict[tuple, GraspSet]:
    branches = {}
    for branch in BRANCHES:
        for tag in TAG_ORDER:
            gs = import_grasps(_need(out / "branches" / f"{branch}_{tag}.json"))
            branches[(branch, tag)] = gs.retag(tag) if gs.tag != tag else gs
    return branches


def stage_evaluate(cfg: PipelineConfig, out: Path) -> dict:
    scene_path = out / "scene.json"
    if not scene_path.exists():
        raise StageError("evaluate", "force-closure evaluation needs the analytic scene.json")
    scene = io.load_scene(scene_path)
    branches = load_branches(out)
    results = evaluate_branches(branches, scene, cfg.friction)
    report = {
        "scene_id": cfg.name,
        "seed": cfg.seed,
        "n_objects": len(scene.primitives),
        "m": cfg.m,
        "n": cfg.n,
        "results": [r.to_dict() for r in results.values()],
        "gains": nvs_gain_stats(results),
        "config": cfg.to_dict(),
    }
    metrics_path = out / "metrics.json"
    if metrics_path.exists():
        report["metrics"] = io.load_json(metrics_path)
    io.dump_json(report, out / "report.json")
    return report


STAGE_FUNCS = {
    "scene-gen": stage_scene_gen,
    "fit": stage_fit,
    "render": stage_render,
    "propose": stage_propose,
    "postprocess": stage_postprocess,
    "evaluate": stage_evaluate,
}


def run_stage(name: str, cfg: PipelineConfig, out: Path):
    t0 = time.perf_counter()
    try:
        result = STAGE_FUNCS[name](cfg, Path(out))
    except StageError:
        raise
    except Exception as e:  # surface the failing stage by name
        raise StageError(name, f"{type(e).__name__}: {e}") from e
    log.info("stage %s done in %.2fs", name, time.perf_counter() - t0)
    return result


def run_pipeline(cfg: PipelineConfig, out, stages: Sequence[str] = STAGES) -> dict:
    """Run ``stages`` in order and return the report (when evaluate ran)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out)
    timings = {}
    result = None
    for name in stages:
        if name == "scene-gen" and cfg.frames_dir:
            continue
        t0 = time.perf_counter()
        result = run_stage(name, cfg, out)
        timings[name] = time.perf_counter() - t0
    io.dump_json(timings, out / "timings.json")
    return result


# ---------------------------------------------------------------------------
# reporting


def load_report(out) -> dict:
    return io.load_json(Path(out) / "report.json")


def summarize(report: dict) -> str:
    lines = [f"scene {report['scene_id']}  ({report['n_objects']} objects, M={report['m']}, N={report['n']})",
             f"{'branch':<8} {'set':<11} {'grasps':>7} {'fc':>6} {'coverage':>9}"]
    for r in report["results"]:
        n_cov = len(r["covered_objects"])
        lines.append(f"{r['branch']:<8} {r['tag']:<11} {r['grasp_count']:>7d} {r['fc_count']:>6d} "
                     f"{r['coverage_percent']:>8.2f}%  ({n_cov} of {report['n_objects']} objects)")
    lines.append("novel-view gains (real+nvs vs real):")
    for branch, g in report["gains"].items():
        lines.append(f"  {branch:<8} fc {g['fc_gain']:+d}  objects +{g['coverage_gain']} {g['objects_added']}"
                     f"  nvs fc survivors {g['nvs_fc_survivors']}")
    if "metrics" in report:
        for role in ("real", "novel"):
            m = report["metrics"].get(f"mean_{role}")
            if m:
                lines.append(f"{role} views: PSNR {m['psnr']:.2f} dB  MS-SSIM {m['ms_ssim']:.4f}  "
                             f"depth L1 {m['depth_l1']:.4f} m")
    return "\n".join(lines)


def gain_rows(reports: Sequence[dict]) -> List[dict]:
    rows = []
    for rep in reports:
        for branch in BRANCHES:
            g = rep["gains"].get(branch)
            if g is None:
                continue
            rows.append({"scene_id": rep["scene_id"], "branch": branch,
                         "fc_gain": g["fc_gain"], "coverage_gain": g["coverage_gain"]})
    return rows


def write_gain_csv(path, reports: Sequence[dict]) -> int:
    rows = gain_rows(reports)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["scene_id", "branch", "fc_gain", "coverage_gain"])
        w.writeheader()
        w.writerows(rows)
    return len(rows)
