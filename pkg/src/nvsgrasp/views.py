"""Camera placement on a quarter sphere around the table, real-view selection
and novel-view sampling close to the real views."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .geometry import PinholeCamera, look_at, vector_angle

WORLD_UP = np.array([0.0, 0.0, 1.0])
MIN_SEPARATION = 1e-3


class ViewConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ViewpointSpec:
    azimuth: float
    elevation: float
    radius: float
    target: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.radius <= 0:
            raise ViewConfigError("radius must be positive")
        if not 0 < self.elevation <= np.pi / 2:
            raise ViewConfigError("elevation must lie in (0, pi/2]")

    def eye(self) -> np.ndarray:
        ce = np.cos(self.elevation)
        return np.asarray(self.target, float) + self.radius * np.array(
            [ce * np.cos(self.azimuth), ce * np.sin(self.azimuth), np.sin(self.elevation)])

    def camera(self, intrinsics: PinholeCamera) -> PinholeCamera:
        eye = self.eye()
        target = np.asarray(self.target, float)
        # straight overhead: world up is parallel to the optical axis
        up = WORLD_UP if self.elevation < np.pi / 2 - 1e-9 else np.array(
            [-np.cos(self.azimuth), -np.sin(self.azimuth), 0.0])
        return intrinsics.with_pose(look_at(eye, target, up))


def spherical_coords(camera: PinholeCamera, target=(0.0, 0.0, 0.0)) -> ViewpointSpec:
    d = camera.center - np.asarray(target, float)
    r = float(np.linalg.norm(d))
    return ViewpointSpec(float(np.arctan2(d[1], d[0])), float(np.arcsin(np.clip(d[2] / r, -1, 1))), r,
                         tuple(float(t) for t in target))


def quarter_sphere_grid(intrinsics: PinholeCamera, n_azimuth: int = 16, n_elevation: int = 16,
                        radius: float = 0.6, target=(0.0, 0.0, 0.0),
                        azimuth_span=(0.0, np.pi / 2),
                        elevation_span=(np.radians(30.0), np.radians(80.0))) -> List[PinholeCamera]:
    """Regular azimuth x elevation grid; index = elevation_row * n_azimuth + azimuth_col."""
    if n_azimuth < 1 or n_elevation < 1:
        raise ViewConfigError("grid needs at least one azimuth and one elevation")
    az = np.linspace(*azimuth_span, n_azimuth) if n_azimuth > 1 else np.array([azimuth_span[0]])
    el = np.linspace(*elevation_span, n_elevation) if n_elevation > 1 else np.array([elevation_span[0]])
    return [ViewpointSpec(float(a), float(e), radius, tuple(target)).camera(intrinsics)
            for e in el for a in az]


def select_real_views(grid: Sequence[PinholeCamera], m: int, start: int = 0,
                      n_azimuth: Optional[int] = None) -> List[PinholeCamera]:
    """``m`` consecutive viewpoints on one azimuth ring, starting at ``start``.

    With ``n_azimuth`` given, the run is kept on the start's ring, shifting
    back if it would run past the ring's end.
    """
    if m < 1 or m > len(grid):
        raise ViewConfigError(f"cannot select {m} views from a grid of {len(grid)}")
    if n_azimuth is None:
        n_azimuth = len(grid)
    if m > n_azimuth:
        raise ViewConfigError(f"a ring holds only {n_azimuth} views, {m} requested")
    ring, col = divmod(start, n_azimuth)
    col = min(col, n_azimuth - m)
    first = ring * n_azimuth + col
    return list(grid[first:first + m])


def sample_novel_views(real: Sequence[PinholeCamera], n: int,
                       max_az_offset: float = np.radians(10.0),
                       max_el_offset: float = np.radians(7.5),
                       max_radius_offset: float = 0.05,
                       seed=0, target=(0.0, 0.0, 0.0), max_resample: int = 100) -> List[PinholeCamera]:
    """``n`` cameras perturbed from the real views (round robin over parents).

    Each draw offsets the parent's azimuth, elevation and radius uniformly
    within the bounds and re-aims at ``target``. Draws whose optical axis lies
    within 1e-3 rad of some real view's axis are redrawn.
    """
    if n < 0:
        raise ViewConfigError("n must be non-negative")
    if min(max_az_offset, max_el_offset, max_radius_offset) < 0:
        raise ViewConfigError("offset bounds must be non-negative")
    if n == 0:
        return []
    if not real:
        raise ViewConfigError("need at least one real view")
    if max_az_offset < MIN_SEPARATION / 2 and max_el_offset < MIN_SEPARATION / 2:
        raise ViewConfigError("offset bounds too small to separate novel views from real views")
    rng = np.random.default_rng(seed)
    parents = [spherical_coords(c, target) for c in real]
    real_axes = [c.optical_axis for c in real]
    out = []
    for i in range(n):
        k = i % len(real)
        p = parents[k]
        for _ in range(max_resample):
            az = p.azimuth + rng.uniform(-max_az_offset, max_az_offset)
            el = np.clip(p.elevation + rng.uniform(-max_el_offset, max_el_offset), 1e-3, np.pi / 2)
            r = max(p.radius + rng.uniform(-max_radius_offset, max_radius_offset), 1e-3)
            cam = ViewpointSpec(float(az), float(el), float(r), p.target).camera(real[k])
            if min(vector_angle(cam.optical_axis, a) for a in real_axes) >= MIN_SEPARATION:
                out.append(cam)
                break
        else:
            raise ViewConfigError("could not draw a novel view separated from the real views")
    return out


def parent_counts(n_real: int, n: int) -> List[int]:
    """How many novel views each real view parents under round-robin assignment."""
    return [len(range(k, n, n_real)) for k in range(n_real)]
