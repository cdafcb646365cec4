"""Isotropic Gaussian splat map: initialization, tiled rendering, photometric
and depth loss, and color/opacity optimization from posed RGB-D keyframes.

Camera tracking is not part of this module; every keyframe comes with its pose.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import _raster
from .geometry import InputShapeError, PinholeCamera
from .synthscene import RenderedFrame

log = logging.getLogger(__name__)

NEAR = 1e-3
DEPTH_EPS = 1e-6
MIN_OPACITY = 1e-6
INIT_OPACITY = 0.5

Keyframe = Tuple[RenderedFrame, PinholeCamera]


class SplatMap:
    """Ordered set of isotropic splats stored as parallel arrays."""

    def __init__(self, means=None, radii=None, colors=None, opacities=None):
        self.means = np.zeros((0, 3)) if means is None else np.asarray(means, dtype=float).reshape(-1, 3)
        n = len(self.means)
        self.radii = np.zeros(0) if radii is None else np.asarray(radii, dtype=float).reshape(n)
        self.colors = np.zeros((0, 3)) if colors is None else np.asarray(colors, dtype=float).reshape(n, 3)
        self.opacities = np.zeros(0) if opacities is None else np.asarray(opacities, dtype=float).reshape(n)
        self.validate()

    def __len__(self) -> int:
        return len(self.means)

    def validate(self) -> None:
        if len(self) == 0:
            return
        if not np.all(self.radii > 0):
            raise ValueError("splat radii must be positive")
        if not np.all((self.opacities > 0) & (self.opacities <= 1)):
            raise ValueError("splat opacities must lie in (0, 1]")
        if not np.all((self.colors >= 0) & (self.colors <= 1)):
            raise ValueError("splat colors must lie in [0, 1]")

    def copy(self) -> "SplatMap":
        return SplatMap(self.means.copy(), self.radii.copy(), self.colors.copy(), self.opacities.copy())

    def append(self, means, radii, colors, opacities) -> None:
        self.means = np.concatenate([self.means, np.reshape(means, (-1, 3))])
        self.radii = np.concatenate([self.radii, np.ravel(radii)])
        self.colors = np.concatenate([self.colors, np.reshape(colors, (-1, 3))])
        self.opacities = np.concatenate([self.opacities, np.ravel(opacities)])

    def subset(self, idx) -> "SplatMap":
        return SplatMap(self.means[idx], self.radii[idx], self.colors[idx], self.opacities[idx])

    def save_ply(self, path) -> None:
        n = len(self)
        header = ("ply\nformat binary_little_endian 1.0\n"
                  f"element vertex {n}\n"
                  + "".join(f"property double {p}\n" for p in _PLY_PROPS)
                  + "end_header\n")
        data = np.empty(n, dtype=[(p, "<f8") for p in _PLY_PROPS])
        data["x"], data["y"], data["z"] = self.means.T
        data["sigma"] = self.radii
        data["red"], data["green"], data["blue"] = self.colors.T
        data["opacity"] = self.opacities
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(data.tobytes())

    @classmethod
    def load_ply(cls, path) -> "SplatMap":
        with open(path, "rb") as f:
            raw = f.read()
        end = raw.index(b"end_header\n") + len(b"end_header\n")
        lines = raw[:end].decode("ascii").splitlines()
        if lines[0] != "ply" or "binary_little_endian" not in lines[1]:
            raise ValueError(f"{path}: not a binary little-endian PLY")
        n = 0
        props = []
        for ln in lines:
            parts = ln.split()
            if parts[:2] == ["element", "vertex"]:
                n = int(parts[2])
            elif parts and parts[0] == "property":
                props.append((parts[2], {"double": "<f8", "float": "<f4"}[parts[1]]))
        data = np.frombuffer(raw[end:], dtype=props, count=n)
        return cls(np.column_stack([data["x"], data["y"], data["z"]]), data["sigma"],
                   np.column_stack([data["red"], data["green"], data["blue"]]), data["opacity"])


_PLY_PROPS = ("x", "y", "z", "sigma", "red", "green", "blue", "opacity")


@dataclass
class OptimizationConfig:
    iterations: int = 100
    lr_color: float = 0.0025
    lr_opacity: float = 0.05
    w_rgb: float = 0.5
    w_depth: float = 1.0
    optimizer: str = "adam"  # or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    tau_sil: float = 0.5
    tau_depth: float = 50.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.lr_color <= 0 or self.lr_opacity <= 0:
            raise ValueError("learning rates must be positive")
        if self.w_rgb < 0 or self.w_depth < 0:
            raise ValueError("loss weights must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# rendering


@dataclass
class Projection:
    """Splats visible to one camera, sorted front to back."""
    index: np.ndarray  # into the map
    u: np.ndarray
    v: np.ndarray
    s: np.ndarray
    z: np.ndarray


def project_splats(smap: SplatMap, camera: PinholeCamera) -> Projection:
    pc = camera.world_to_camera(smap.means)
    z = pc[:, 2]
    front = z > NEAR
    zf = np.where(front, z, 1.0)
    u = camera.fx * pc[:, 0] / zf + camera.cx
    v = camera.fy * pc[:, 1] / zf + camera.cy
    s = smap.radii * camera.fx / zf
    r = 3.0 * s
    inside = (u + r >= 0) & (u - r <= camera.width - 1) & (v + r >= 0) & (v - r <= camera.height - 1)
    keep = np.flatnonzero(front & inside)
    # stable sort: equal depths keep map order
    order = keep[np.argsort(z[keep], kind="stable")]
    return Projection(order, u[order], v[order], s[order], z[order])


@dataclass
class RenderResult:
    color: np.ndarray
    depth: np.ndarray
    silhouette: np.ndarray
    zsum: np.ndarray
    proj: Optional[Projection] = None
    tiles: Optional[tuple] = None


def _packed(smap: SplatMap, proj: Projection) -> np.ndarray:
    return _raster.pack(proj.u, proj.v, proj.s, proj.z, smap.opacities[proj.index],
                        smap.colors[proj.index])


def render(smap: SplatMap, camera: PinholeCamera, tile: int = _raster.TILE) -> RenderResult:
    """Tile-rasterize the map: color, silhouette-normalized depth, silhouette."""
    proj = project_splats(smap, camera)
    P = _packed(smap, proj)
    offsets, items = _raster.bin_tiles(P, camera.width, camera.height, tile)
    color, zsum, sil = _raster.forward_tiled(P, camera.width, camera.height, tile, offsets, items)
    depth = zsum / np.maximum(sil, DEPTH_EPS)
    return RenderResult(color, depth, sil, zsum, proj, (P, tile, offsets, items))


def render_naive(smap: SplatMap, camera: PinholeCamera) -> RenderResult:
    """Per-pixel full-list compositor; the correctness reference for ``render``."""
    proj = project_splats(smap, camera)
    color, zsum, sil = _raster.forward_naive(_packed(smap, proj), camera.width, camera.height)
    depth = zsum / np.maximum(sil, DEPTH_EPS)
    return RenderResult(color, depth, sil, zsum, proj)


# ---------------------------------------------------------------------------
# initialization and densification


def initialize_from_frame(smap: SplatMap, frame: RenderedFrame, camera: PinholeCamera,
                          mask: np.ndarray) -> int:
    """Append one splat per masked pixel with positive depth. Returns the count added."""
    mask = np.asarray(mask, dtype=bool)
    H, W = camera.height, camera.width
    if mask.shape != (H, W) or frame.depth.shape != (H, W) or frame.color.shape[:2] != (H, W):
        raise InputShapeError("mask, frame and camera dimensions must agree")
    vv, uu = np.nonzero(mask & (frame.depth > 0))
    if len(vv) == 0:
        return 0
    z = frame.depth[vv, uu]
    pc = np.column_stack([(uu - camera.cx) * z / camera.fx, (vv - camera.cy) * z / camera.fy, z])
    smap.append(camera.pose.apply(pc), z / camera.fx,
                np.clip(frame.color[vv, uu], 0.0, 1.0), np.full(len(z), INIT_OPACITY))
    return len(z)


def densification_mask(smap: SplatMap, frame: RenderedFrame, camera: PinholeCamera,
                       tau_sil: float = 0.5, tau_depth: float = 50.0) -> np.ndarray:
    """Pixels with valid depth that the map leaves unexplained: low silhouette,
    or a depth error above ``tau_depth`` times the median depth error."""
    valid = frame.depth > 0
    if len(smap) == 0:
        return valid.copy()
    r = render(smap, camera)
    err = np.abs(r.depth - frame.depth)
    covered = valid & (r.silhouette >= tau_sil)
    ref = err[covered] if covered.any() else err[valid]
    med = float(np.median(ref)) if ref.size else 0.0
    return valid & ((r.silhouette < tau_sil) | (err > tau_depth * med))


# ---------------------------------------------------------------------------
# loss and gradients


def _frame_loss_grad(smap: SplatMap, frame: RenderedFrame, camera: PinholeCamera,
                     w_rgb: float, w_depth: float, need_grad: bool):
    r = render(smap, camera)
    H, W = camera.height, camera.width
    dc = r.color - frame.color
    valid = frame.depth > 0
    nvalid = int(valid.sum())
    dd = np.where(valid, r.depth - frame.depth, 0.0)
    loss = w_rgb * float(np.abs(dc).mean())
    if nvalid:
        loss += w_depth * float(np.abs(dd).sum() / nvalid)
    if not need_grad:
        return loss, None, None
    g_color = w_rgb * np.sign(dc) / dc.size
    g_depth = w_depth * np.sign(dd) / nvalid if nvalid else np.zeros((H, W))
    # depth = zsum / max(sil, eps)
    denom = np.maximum(r.silhouette, DEPTH_EPS)
    g_zsum = g_depth / denom
    g_sil = np.where(r.silhouette > DEPTH_EPS, -g_depth * r.zsum / denom ** 2, 0.0)
    P, tile, offsets, items = r.tiles
    gc, go = _raster.backward_tiled(P, W, H, tile, offsets, items,
                                    np.ascontiguousarray(g_color), np.ascontiguousarray(g_zsum),
                                    np.ascontiguousarray(g_sil))
    grad_color = np.zeros_like(smap.colors)
    grad_op = np.zeros_like(smap.opacities)
    grad_color[r.proj.index] = gc
    grad_op[r.proj.index] = go
    return loss, grad_color, grad_op


def loss(smap: SplatMap, keyframes: Sequence[Keyframe], w_rgb: float = 0.5, w_depth: float = 1.0) -> float:
    """Sum over keyframes of weighted mean L1 color error and mean L1 depth
    error over pixels with valid ground-truth depth."""
    if not keyframes:
        raise ValueError("need at least one keyframe")
    total = 0.0
    for frame, cam in keyframes:
        total += _frame_loss_grad(smap, frame, cam, w_rgb, w_depth, False)[0]
    return total


def loss_and_grad(smap: SplatMap, keyframes: Sequence[Keyframe], w_rgb: float = 0.5,
                  w_depth: float = 1.0):
    """Loss plus its gradient w.r.t. every splat's color (n,3) and opacity (n,)."""
    if not keyframes:
        raise ValueError("need at least one keyframe")
    total = 0.0
    g_col = np.zeros_like(smap.colors)
    g_op = np.zeros_like(smap.opacities)
    # fixed keyframe order keeps the reduction deterministic
    for frame, cam in keyframes:
        lval, gc, go = _frame_loss_grad(smap, frame, cam, w_rgb, w_depth, True)
        total += lval
        g_col += gc
        g_op += go
    return total, g_col, g_op


def _clamp(smap: SplatMap) -> None:
    np.clip(smap.colors, 0.0, 1.0, out=smap.colors)
    np.clip(smap.opacities, MIN_OPACITY, 1.0, out=smap.opacities)


def optimize(smap: SplatMap, keyframes: Sequence[Keyframe],
             config: Optional[OptimizationConfig] = None) -> List[float]:
    """Gradient descent on splat colors and opacities; means and radii stay fixed.

    Returns the loss before each step (length = iterations). Parameters are
    clamped back into range after every step.
    """
    config = config or OptimizationConfig()
    if len(smap) == 0:
        raise ValueError("cannot optimize an empty map")
    trace: List[float] = []
    m_c = np.zeros_like(smap.colors)
    v_c = np.zeros_like(smap.colors)
    m_o = np.zeros_like(smap.opacities)
    v_o = np.zeros_like(smap.opacities)
    b1, b2, eps = config.beta1, config.beta2, 1e-15
    for it in range(config.iterations):
        lval, gc, go = loss_and_grad(smap, keyframes, config.w_rgb, config.w_depth)
        trace.append(lval)
        if config.optimizer == "sgd":
            smap.colors -= config.lr_color * gc
            smap.opacities -= config.lr_opacity * go
        else:
            k = it + 1
            m_c = b1 * m_c + (1 - b1) * gc
            v_c = b2 * v_c + (1 - b2) * gc * gc
            m_o = b1 * m_o + (1 - b1) * go
            v_o = b2 * v_o + (1 - b2) * go * go
            smap.colors -= config.lr_color * (m_c / (1 - b1 ** k)) / (np.sqrt(v_c / (1 - b2 ** k)) + eps)
            smap.opacities -= config.lr_opacity * (m_o / (1 - b1 ** k)) / (np.sqrt(v_o / (1 - b2 ** k)) + eps)
        _clamp(smap)
    return trace


def fit_scene(keyframes: Sequence[Keyframe], config: Optional[OptimizationConfig] = None) -> SplatMap:
    """Incremental mapping over posed frames: densify, initialize, then
    optimize against every frame seen so far."""
    config = config or OptimizationConfig()
    if not keyframes:
        raise ValueError("fit_scene needs at least one frame")
    smap = SplatMap()
    for i, (frame, cam) in enumerate(keyframes):
        mask = densification_mask(smap, frame, cam, config.tau_sil, config.tau_depth)
        added = initialize_from_frame(smap, frame, cam, mask)
        trace = optimize(smap, keyframes[:i + 1], config) if len(smap) else []
        log.info("frame %d: +%d splats (total %d), loss %s -> %s", i, added, len(smap),
                 f"{trace[0]:.4f}" if trace else "-", f"{trace[-1]:.4f}" if trace else "-")
    return smap
