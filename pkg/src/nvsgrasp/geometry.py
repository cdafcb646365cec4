"""Rigid transforms, pinhole cameras and depth unprojection.

Conventions used throughout the package:

* ``RigidTransform`` maps points from a local frame into the world frame,
  ``p_world = R @ p_local + t``.
* A camera pose is camera-to-world. The camera frame is x right, y down,
  z along the optical axis (OpenCV convention).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    """Degenerate geometric configuration."""


class InputShapeError(ValueError):
    """Array dimensions do not match what the operation expects."""


def _check_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> None:
    if R.shape != (3, 3):
        raise InputShapeError(f"rotation must be 3x3, got {R.shape}")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol:
        raise GeometryError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise GeometryError(f"rotation has det {det:.12f}, expected +1")


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        _check_rotation(R)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) points from the local frame to the world frame."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (points - self.translation) @ self.rotation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self * other``: apply ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def to_dict(self) -> dict:
        return {"rotation": [float(v) for v in self.rotation.reshape(-1)],
                "translation": [float(v) for v in self.translation]}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(np.asarray(d["rotation"], dtype=float).reshape(3, 3),
                   np.asarray(d["translation"], dtype=float))


def project_to_so3(M: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (SVD polar projection)."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues formula."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (from a random unit quaternion)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return quaternion_to_matrix(q)


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def vector_angle(a, b) -> np.ndarray:
    """Angle between vectors via atan2(|a x b|, a.b), accurate near 0 and pi."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return np.arctan2(np.linalg.norm(np.cross(a, b), axis=-1), np.einsum("...i,...i->...", a, b))


def rotation_geodesic_distance(Ra: np.ndarray, Rb: np.ndarray, symmetric: bool = False) -> float:
    """Angle in radians of the relative rotation ``Ra^T Rb``.

    With ``symmetric=True`` the parallel-jaw flip about the approach axis (+x of
    the gripper frame) is folded in, i.e. ``min(d(Ra, Rb), d(Ra, Rb @ Rx(pi)))``.
    """
    Ra = np.asarray(Ra, dtype=float)
    Rb = np.asarray(Rb, dtype=float)
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    d = float(np.arccos(np.clip(c, -1.0, 1.0)))
    if symmetric:
        # Rb @ diag(1,-1,-1): trace(Ra^T Rb F) = 2*(Ra^T Rb)_00 - trace(Ra^T Rb)
        M = Ra.T @ Rb
        cf = (2.0 * M[0, 0] - np.trace(M) - 1.0) / 2.0
        d = min(d, float(np.arccos(np.clip(cf, -1.0, 1.0))))
    return d


def pairwise_rotation_distance(Ra: np.ndarray, Rb: np.ndarray, symmetric: bool = False) -> np.ndarray:
    """Geodesic distances between stacks (n,3,3) and (m,3,3) -> (n, m)."""
    Ra = np.asarray(Ra, dtype=float).reshape(-1, 3, 3)
    Rb = np.asarray(Rb, dtype=float).reshape(-1, 3, 3)
    # trace(Ra^T Rb) = sum_ij Ra_ij Rb_ij
    tr = np.einsum("nij,mij->nm", Ra, Rb)
    d = np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))
    if symmetric:
        # (Ra^T Rb)_00 = sum_i Ra_i0 Rb_i0
        m00 = np.einsum("ni,mi->nm", Ra[:, :, 0], Rb[:, :, 0])
        df = np.arccos(np.clip((2.0 * m00 - tr - 1.0) / 2.0, -1.0, 1.0))
        d = np.minimum(d, df)
    return d


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-world pose at ``eye`` whose +z optical axis points at ``target``.

    Image "up" (-y of the camera) is aligned as closely as possible with ``up``.
    """
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    up = np.asarray(up, dtype=float)
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise GeometryError("look_at: eye and target coincide")
    z = fwd / n
    x = np.cross(z, up)
    nx = np.linalg.norm(x)
    if nx < 1e-9 * max(np.linalg.norm(up), 1e-300):
        raise GeometryError("look_at: up vector is parallel to the viewing direction")
    x /= nx
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])
    return RigidTransform(R, eye)


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: RigidTransform = field(default_factory=RigidTransform)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float,
                 pose: Optional[RigidTransform] = None) -> "PinholeCamera":
        f = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height,
                   pose if pose is not None else RigidTransform())

    def with_pose(self, pose: RigidTransform) -> "PinholeCamera":
        return PinholeCamera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    @property
    def optical_axis(self) -> np.ndarray:
        return self.pose.rotation[:, 2]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return self.pose.apply_inverse(points)

    def project(self, points: np.ndarray):
        """World points (...,3) -> (pixel uv (...,2), camera-frame depth (...))."""
        pc = self.world_to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    def pixel_rays(self):
        """Unit world-frame ray directions (H, W, 3) through every pixel center,
        plus the per-pixel cosine between the ray and the optical axis."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(float)
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
        norm = np.linalg.norm(d, axis=-1, keepdims=True)
        d_cam = d / norm
        return d_cam @ self.pose.rotation.T, d_cam[..., 2]

    def to_dict(self) -> dict:
        return {"fx": float(self.fx), "fy": float(self.fy), "cx": float(self.cx), "cy": float(self.cy),
                "width": int(self.width), "height": int(self.height), "pose": self.pose.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "PinholeCamera":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), RigidTransform.from_dict(d["pose"]))


@dataclass
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = len(self.points)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=float).reshape(n, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(n, 3)
            if n and np.abs(np.linalg.norm(self.normals, axis=1) - 1.0).max() > 1e-6:
                raise GeometryError("point cloud normals must have unit length")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[idx],
                          None if self.colors is None else self.colors[idx],
                          None if self.normals is None else self.normals[idx],
                          None if self.labels is None else self.labels[idx])

    @staticmethod
    def concatenate(clouds) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.zeros((0, 3)))

        def cat(attr):
            vals = [getattr(c, attr) for c in clouds]
            if any(v is None for v in vals):
                return None
            return np.concatenate(vals)

        return PointCloud(np.concatenate([c.points for c in clouds]),
                          cat("colors"), cat("normals"), cat("labels"))


def _pixel_grid(camera: PinholeCamera, stride: int):
    v, u = np.mgrid[0:camera.height:stride, 0:camera.width:stride]
    return u, v


def unproject(depth: np.ndarray, camera: PinholeCamera, color: Optional[np.ndarray] = None,
              stride: int = 1, normals: Optional[np.ndarray] = None) -> PointCloud:
    """Back-project a z-depth image to a world-frame point cloud.

    Pixels with depth <= 0 (or non-finite) are skipped. ``normals`` is an
    optional (H, W, 3) world-frame normal image sampled alongside the points;
    pixels whose normal is zero are skipped too.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != (camera.height, camera.width):
        raise InputShapeError(f"depth shape {depth.shape} != camera ({camera.height}, {camera.width})")
    if stride < 1:
        raise ValueError("stride must be a positive integer")
    if color is not None:
        color = np.asarray(color, dtype=float)
        if color.shape[:2] != depth.shape:
            raise InputShapeError("color and depth dimensions differ")
    u, v = _pixel_grid(camera, stride)
    z = depth[v, u]
    valid = np.isfinite(z) & (z > 0)
    if normals is not None:
        nrm = normals[v, u]
        valid &= np.linalg.norm(nrm, axis=-1) > 0.5
    u, v, z = u[valid], v[valid], z[valid]
    pc = np.stack([(u - camera.cx) * z / camera.fx, (v - camera.cy) * z / camera.fy, z], axis=-1)
    pts = camera.pose.apply(pc)
    cols = None if color is None else color[v, u].reshape(-1, 3)
    nrms = None if normals is None else normals[v, u].reshape(-1, 3)
    return PointCloud(pts, cols, nrms)


def depth_normals(depth: np.ndarray, camera: PinholeCamera, max_rel_jump: float = 0.05) -> np.ndarray:
    """World-frame unit normals (H, W, 3) estimated from a depth image.

    Uses central differences of the back-projected point map, oriented toward
    the camera. Pixels next to invalid depth or with a depth discontinuity
    larger than ``max_rel_jump`` times the pixel depth get a zero normal.
    """
    depth = np.asarray(depth, dtype=float)
    H, W = depth.shape
    v, u = np.mgrid[0:H, 0:W].astype(float)
    P = np.stack([(u - camera.cx) * depth / camera.fx, (v - camera.cy) * depth / camera.fy, depth], axis=-1)
    out = np.zeros((H, W, 3))
    if H < 3 or W < 3:
        return out
    c = depth[1:-1, 1:-1]
    nb = [depth[1:-1, 2:], depth[1:-1, :-2], depth[2:, 1:-1], depth[:-2, 1:-1]]
    ok = c > 0
    for d in nb:
        ok &= (d > 0) & (np.abs(d - c) <= max_rel_jump * c)
    du = P[1:-1, 2:] - P[1:-1, :-2]
    dv = P[2:, 1:-1] - P[:-2, 1:-1]
    n = np.cross(du, dv)
    nn = np.linalg.norm(n, axis=-1)
    ok &= nn > 1e-15
    n = np.where(ok[..., None], n / np.where(nn > 0, nn, 1.0)[..., None], 0.0)
    # face the camera (camera-frame points have +z depth; normal must have n.p < 0)
    flip = np.einsum("ijk,ijk->ij", n, P[1:-1, 1:-1]) > 0
    n[flip] *= -1.0
    out[1:-1, 1:-1] = n @ camera.pose.rotation.T
    return out
