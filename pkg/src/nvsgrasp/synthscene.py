"""Primitive tabletop scenes with an analytic ray tracer.

A scene is a handful of spheres, boxes and cylinders resting on the table
plane z = 0. Ray casting is exact (closed-form intersections), which makes it
usable both as the ground-truth image source and as the contact oracle for
force-closure checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .geometry import PinholeCamera, PointCloud, RigidTransform

KINDS = ("sphere", "box", "cylinder")
T_MIN = 1e-9


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Primitive:
    kind: str
    pose: RigidTransform
    dimensions: tuple
    albedo: tuple
    object_id: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SceneError(f"unknown primitive kind {self.kind!r}")
        dims = tuple(float(d) for d in np.atleast_1d(self.dimensions))
        expected = {"sphere": 1, "box": 3, "cylinder": 2}[self.kind]
        if len(dims) != expected:
            raise SceneError(f"{self.kind} needs {expected} dimensions, got {len(dims)}")
        if min(dims) <= 0:
            raise SceneError("primitive dimensions must be positive")
        alb = tuple(float(a) for a in self.albedo)
        if len(alb) != 3 or min(alb) < 0 or max(alb) > 1:
            raise SceneError("albedo must be an rgb triple in [0, 1]")
        if int(self.object_id) < 1:
            raise SceneError("object_id must be a positive integer")
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "albedo", alb)
        object.__setattr__(self, "object_id", int(self.object_id))

    def lowest_z(self) -> float:
        R, t = self.pose.rotation, self.pose.translation
        if self.kind == "sphere":
            return t[2] - self.dimensions[0]
        if self.kind == "box":
            return t[2] - float(np.abs(R[2]) @ np.asarray(self.dimensions))
        r, h = self.dimensions
        ax = R[:, 2]
        return t[2] - h * abs(ax[2]) - r * np.sqrt(max(0.0, 1.0 - ax[2] ** 2))

    def bounding_radius(self) -> float:
        if self.kind == "sphere":
            return self.dimensions[0]
        if self.kind == "box":
            return float(np.linalg.norm(self.dimensions))
        r, h = self.dimensions
        return float(np.hypot(r, h))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "pose": self.pose.to_dict(), "dimensions": list(self.dimensions),
                "albedo": list(self.albedo), "object_id": self.object_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        return cls(d["kind"], RigidTransform.from_dict(d["pose"]), tuple(d["dimensions"]),
                   tuple(d["albedo"]), int(d["object_id"]))


@dataclass(frozen=True)
class Table:
    albedo: tuple = (0.55, 0.5, 0.45)
    half_extent: Optional[float] = 0.3  # None: infinite plane


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple = ()
    table: Optional[Table] = field(default_factory=Table)
    light_direction: tuple = (0.3, 0.2, -1.0)
    ambient: float = 0.3

    def __post_init__(self):
        prims = tuple(self.primitives)
        ids = [p.object_id for p in prims]
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise SceneError(f"object ids must be exactly 1..K, got {ids}")
        if self.table is not None:
            for p in prims:
                if p.lowest_z() < -1e-9:
                    raise SceneError(f"object {p.object_id} reaches below the table plane")
        ld = np.asarray(self.light_direction, dtype=float)
        ld = ld / np.linalg.norm(ld)
        if not 0.0 <= self.ambient <= 1.0:
            raise SceneError("ambient must lie in [0, 1]")
        object.__setattr__(self, "primitives", prims)
        object.__setattr__(self, "light_direction", tuple(float(v) for v in ld))

    @property
    def object_ids(self) -> List[int]:
        return [p.object_id for p in self.primitives]

    def to_dict(self) -> dict:
        return {
            "primitives": [p.to_dict() for p in self.primitives],
            "table": None if self.table is None else {"albedo": list(self.table.albedo),
                                                      "half_extent": self.table.half_extent},
            "light_direction": list(self.light_direction),
            "ambient": self.ambient,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        table = d.get("table")
        return cls(tuple(Primitive.from_dict(p) for p in d["primitives"]),
                   None if table is None else Table(tuple(table["albedo"]), table.get("half_extent")),
                   tuple(d["light_direction"]), float(d["ambient"]))


@dataclass
class RenderedFrame:
    """Color (H,W,3) in [0,1], z-depth (H,W) in meters (0 = no return),
    object labels (H,W) and world normals (H,W,3) when known."""
    color: np.ndarray
    depth: np.ndarray
    label: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# per-primitive intersection, vectorized over rays in the local frame
# each returns (t, local_normal) with t = inf for misses


def _hit_sphere(o, d, r):
    b = np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - r * r
    disc = b * b - c
    t = np.full(len(o), np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    tt = np.where(t0 > T_MIN, t0, np.where(t1 > T_MIN, t1, np.inf))
    t = np.where(ok, tt, np.inf)
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    n = p / r
    return t, n


def _hit_box(o, d, half):
    half = np.asarray(half)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (-half - o) * inv
        tb = (half - o) * inv
    # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
    par = d == 0
    inside = np.abs(o) <= half
    ta = np.where(par, np.where(inside, -np.inf, np.inf), ta)
    tb = np.where(par, np.where(inside, np.inf, -np.inf), tb)
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    ax_near = tmin.argmax(axis=1)
    ax_far = tmax.argmin(axis=1)
    hit = t_far >= np.maximum(t_near, T_MIN)
    use_near = t_near > T_MIN
    t = np.where(hit, np.where(use_near, t_near, t_far), np.inf)
    axis = np.where(use_near, ax_near, ax_far)
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    n = np.zeros_like(o)
    idx = np.arange(len(o))
    n[idx, axis] = np.sign(p[idx, axis])
    n[idx, axis] = np.where(n[idx, axis] == 0, 1.0, n[idx, axis])
    return t, n


def _hit_cylinder(o, d, r, h):
    """Capped cylinder about local z, |z| <= h."""
    n_rays = len(o)
    best_t = np.full(n_rays, np.inf)
    best_n = np.zeros((n_rays, 3))
    # lateral surface
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
    disc = b * b - a * c
    ok = (a > 1e-18) & (disc >= 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    a_safe = np.where(ok, a, 1.0)
    for sgn in (-1.0, 1.0):
        t = (-b + sgn * sq) / a_safe
        z = o[:, 2] + t * d[:, 2]
        good = ok & (t > T_MIN) & (np.abs(z) <= h) & (t < best_t)
        best_t = np.where(good, t, best_t)
        p = o + t[:, None] * d
        nrm = np.stack([p[:, 0] / r, p[:, 1] / r, np.zeros(n_rays)], axis=1)
        best_n = np.where(good[:, None], nrm, best_n)
    # caps
    for zc in (-h, h):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (zc - o[:, 2]) / d[:, 2]
        p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        good = (d[:, 2] != 0) & (t > T_MIN) & (p[:, 0] ** 2 + p[:, 1] ** 2 <= r * r) & (t < best_t)
        best_t = np.where(good, t, best_t)
        best_n = np.where(good[:, None], np.array([0.0, 0.0, np.sign(zc)]), best_n)
    return best_t, best_n


def _intersect_primitive(prim: Primitive, origins, dirs):
    R, tr = prim.pose.rotation, prim.pose.translation
    o = (origins - tr) @ R
    d = dirs @ R
    if prim.kind == "sphere":
        t, n = _hit_sphere(o, d, prim.dimensions[0])
    elif prim.kind == "box":
        t, n = _hit_box(o, d, prim.dimensions)
    else:
        t, n = _hit_cylinder(o, d, *prim.dimensions)
    return t, n @ R.T


def _intersect_table(table: Table, origins, dirs):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origins[:, 2] / dirs[:, 2]
    good = (dirs[:, 2] != 0) & (t > T_MIN)
    p = origins + np.where(good, t, 0.0)[:, None] * dirs
    if table.half_extent is not None:
        good &= (np.abs(p[:, 0]) <= table.half_extent) & (np.abs(p[:, 1]) <= table.half_extent)
    t = np.where(good, t, np.inf)
    # the normal faces the side the ray came from
    n = np.zeros_like(origins)
    n[:, 2] = np.where(origins[:, 2] >= 0, 1.0, -1.0)
    return t, n


def cast_rays(scene: SceneSpec, origins, dirs):
    """First hits of many rays. Returns (t, points, outward normals, labels, albedo);
    misses have t = inf and label -1."""
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_n = np.zeros((n, 3))
    label = np.full(n, -1, dtype=np.int64)
    albedo = np.zeros((n, 3))
    surfaces = [(p, p.object_id, p.albedo) for p in scene.primitives]
    if scene.table is not None:
        surfaces.append((scene.table, 0, scene.table.albedo))
    for surf, sid, alb in surfaces:
        if isinstance(surf, Table):
            t, nrm = _intersect_table(surf, origins, dirs)
        else:
            t, nrm = _intersect_primitive(surf, origins, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_n = np.where(closer[:, None], nrm, best_n)
        label = np.where(closer, sid, label)
        albedo = np.where(closer[:, None], np.asarray(alb), albedo)
    pts = origins + np.where(np.isfinite(best_t), best_t, 0.0)[:, None] * dirs
    nn = np.linalg.norm(best_n, axis=1, keepdims=True)
    best_n = np.where(nn > 0, best_n / np.where(nn > 0, nn, 1.0), 0.0)
    return best_t, pts, best_n, label, albedo


def surface_query(scene: SceneSpec, origin, direction) -> Optional[dict]:
    """First surface hit along a single ray: ``{point, normal, object_id, distance}``
    with the outward normal, or None on a miss. Object id 0 is the table."""
    direction = np.asarray(direction, dtype=float)
    t, p, n, lab, _ = cast_rays(scene, np.asarray(origin, dtype=float)[None], direction[None])
    if not np.isfinite(t[0]):
        return None
    return {"point": p[0], "normal": n[0], "object_id": int(lab[0]), "distance": float(t[0])}


def shade(scene: SceneSpec, albedo: np.ndarray, normals: np.ndarray) -> np.ndarray:
    L = np.asarray(scene.light_direction)
    lam = np.maximum(0.0, normals @ (-L))
    return albedo * (scene.ambient + (1.0 - scene.ambient) * lam)[..., None]


def raytrace(scene: SceneSpec, camera: PinholeCamera) -> RenderedFrame:
    """Ground-truth color, z-depth, label and normal images for ``camera``."""
    H, W = camera.height, camera.width
    dirs, cos_axis = camera.pixel_rays()
    origins = np.broadcast_to(camera.center, (H * W, 3))
    t, _, nrm, lab, alb = cast_rays(scene, origins, dirs.reshape(-1, 3))
    hit = np.isfinite(t)
    depth = np.where(hit, t * cos_axis.reshape(-1), 0.0)
    # normals face the viewer
    facing = np.einsum("ij,ij->i", nrm, dirs.reshape(-1, 3)) > 0
    nrm = np.where(facing[:, None], -nrm, nrm)
    color = np.where(hit[:, None], shade(scene, alb, nrm), 0.0)
    return RenderedFrame(color.reshape(H, W, 3), depth.reshape(H, W),
                         np.where(hit, lab, 0).reshape(H, W),
                         np.where(hit[:, None], nrm, 0.0).reshape(H, W, 3))


# ---------------------------------------------------------------------------
# surface sampling


def _sample_local(prim: Primitive, n: int, rng: np.random.Generator):
    if prim.kind == "sphere":
        r = prim.dimensions[0]
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return r * v, v
    if prim.kind == "box":
        hx, hy, hz = prim.dimensions
        areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        half = np.array([hx, hy, hz])
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        pts = np.zeros((n, 3))
        nrm = np.zeros((n, 3))
        for k in range(3):
            sel = axis == k
            others = [j for j in range(3) if j != k]
            pts[sel, k] = sign[sel] * half[k]
            pts[sel, others[0]] = uv[sel, 0] * half[others[0]]
            pts[sel, others[1]] = uv[sel, 1] * half[others[1]]
            nrm[sel, k] = sign[sel]
        return pts, nrm
    r, h = prim.dimensions
    areas = np.array([2 * np.pi * r * 2 * h, np.pi * r * r, np.pi * r * r])
    part = rng.choice(3, size=n, p=areas / areas.sum())
    phi = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.zeros((n, 3))
    nrm = np.zeros((n, 3))
    side = part == 0
    pts[side] = np.column_stack([r * np.cos(phi[side]), r * np.sin(phi[side]),
                                 rng.uniform(-h, h, size=side.sum())])
    nrm[side] = np.column_stack([np.cos(phi[side]), np.sin(phi[side]), np.zeros(side.sum())])
    for k, zc in ((1, h), (2, -h)):
        sel = part == k
        rad = r * np.sqrt(rng.uniform(size=sel.sum()))
        pts[sel] = np.column_stack([rad * np.cos(phi[sel]), rad * np.sin(phi[sel]), np.full(sel.sum(), zc)])
        nrm[sel, 2] = np.sign(zc)
    return pts, nrm


def sample_surface(scene: SceneSpec, points_per_object: int, seed=0) -> PointCloud:
    """Area-uniform surface samples of every primitive with outward normals
    and object labels; points below the table plane are rejected and redrawn."""
    if points_per_object <= 0:
        raise ValueError("points_per_object must be positive")
    rng = np.random.default_rng(seed)
    all_p, all_n, all_l = [], [], []
    for prim in scene.primitives:
        got_p, got_n = [], []
        need = points_per_object
        for _ in range(1000):
            p, nrm = _sample_local(prim, max(need * 2, 8), rng)
            p = prim.pose.apply(p)
            nrm = nrm @ prim.pose.rotation.T
            keep = p[:, 2] >= 0.0 if scene.table is not None else np.ones(len(p), bool)
            got_p.append(p[keep][:need])
            got_n.append(nrm[keep][:need])
            need -= len(got_p[-1])
            if need == 0:
                break
        else:
            raise SceneError(f"could not sample object {prim.object_id} above the table")
        all_p.extend(got_p)
        all_n.extend(got_n)
        all_l.append(np.full(points_per_object, prim.object_id))
    if not all_l:
        return PointCloud(np.zeros((0, 3)), normals=np.zeros((0, 3)), labels=np.zeros(0, np.int64))
    nrm = np.concatenate(all_n)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(np.concatenate(all_p), normals=nrm, labels=np.concatenate(all_l))


# ---------------------------------------------------------------------------
# random scene generation

PALETTE = np.array([
    [0.85, 0.25, 0.2], [0.2, 0.6, 0.85], [0.25, 0.75, 0.3], [0.9, 0.75, 0.2], [0.6, 0.3, 0.75],
    [0.95, 0.5, 0.15], [0.3, 0.3, 0.8], [0.75, 0.75, 0.75], [0.45, 0.8, 0.75], [0.8, 0.4, 0.6],
])


def random_scene(n_objects: int = 9, seed=0, placement_radius: float = 0.16, gap: float = 0.012,
                 kinds: Sequence[str] = KINDS, max_tries: int = 2000,
                 table: Optional[Table] = None) -> SceneSpec:
    """Collision-free random tabletop scene of ``n_objects`` upright primitives.

    Objects are sized to fit an 8 cm parallel-jaw gripper along at least one
    axis. Raises SceneError when placement fails after ``max_tries`` draws.
    """
    rng = np.random.default_rng(seed)
    placed: List[Primitive] = []
    footprints: List[tuple] = []
    tries = 0
    while len(placed) < n_objects:
        tries += 1
        if tries > max_tries:
            raise SceneError(f"placed only {len(placed)} of {n_objects} objects after {max_tries} tries")
        kind = kinds[rng.integers(len(kinds))]
        yaw = rng.uniform(0, 2 * np.pi)
        c, s = np.cos(yaw), np.sin(yaw)
        Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        if kind == "sphere":
            dims = (rng.uniform(0.018, 0.032),)
            z, foot = dims[0], dims[0]
        elif kind == "box":
            dims = (rng.uniform(0.015, 0.03), rng.uniform(0.015, 0.035), rng.uniform(0.015, 0.035))
            z, foot = dims[2], float(np.hypot(dims[0], dims[1]))
        else:
            dims = (rng.uniform(0.015, 0.03), rng.uniform(0.02, 0.045))
            z, foot = dims[1], dims[0]
        rad = placement_radius * np.sqrt(rng.uniform())
        ang = rng.uniform(0, 2 * np.pi)
        xy = np.array([rad * np.cos(ang), rad * np.sin(ang)])
        if any(np.linalg.norm(xy - q) < foot + f + gap for q, f in footprints):
            continue
        albedo = tuple(PALETTE[len(placed) % len(PALETTE)])
        placed.append(Primitive(kind, RigidTransform(Rz, [xy[0], xy[1], z]), dims, albedo, len(placed) + 1))
        footprints.append((xy, foot))
    return SceneSpec(tuple(placed), table if table is not None else Table())
