import numpy as np
import pytest

from nvsgrasp.geometry import PinholeCamera, vector_angle
from nvsgrasp.views import (ViewConfigError, ViewpointSpec, parent_counts, quarter_sphere_grid, sample_novel_views,
                            select_real_views, spherical_coords)

INTR = PinholeCamera.from_fov(64, 64, 45)
TARGET = np.array([0.01, -0.02, 0.0])


def great_circle(a, b, target=TARGET):
    return float(vector_angle(a.center - target, b.center - target))


def test_single_camera_grid_hits_target():
    (cam,) = quarter_sphere_grid(INTR, 1, 1, radius=0.5, target=TARGET)
    uv, z = cam.project(TARGET[None])
    np.testing.assert_allclose(uv[0], [cam.cx, cam.cy], atol=1e-9)
    assert z[0] == pytest.approx(0.5)


def test_full_grid_count_radius_and_projection():
    grid = quarter_sphere_grid(INTR, 16, 16, radius=0.6, target=TARGET)
    assert len(grid) == 256
    for cam in grid:
        assert abs(np.linalg.norm(cam.center - TARGET) - 0.6) <= 1e-9
        uv, _ = cam.project(TARGET[None])
        assert np.abs(uv[0] - [cam.cx, cam.cy]).max() < 0.5
        assert cam.optical_axis[2] < 0 and cam.center[2] > 0


def test_overhead_viewpoint_is_well_defined():
    cam = ViewpointSpec(0.3, np.pi / 2, 0.4).camera(INTR)
    np.testing.assert_allclose(cam.optical_axis, [0, 0, -1], atol=1e-12)


def test_viewpoint_validation():
    with pytest.raises(ViewConfigError):
        ViewpointSpec(0.0, 0.0, 0.5)
    with pytest.raises(ViewConfigError):
        ViewpointSpec(0.0, 0.5, 0.0)
    with pytest.raises(ViewConfigError):
        quarter_sphere_grid(INTR, 0, 4)


def test_spherical_coords_round_trip():
    spec = ViewpointSpec(0.7, 0.9, 0.45, tuple(TARGET))
    back = spherical_coords(spec.camera(INTR), TARGET)
    assert back.azimuth == pytest.approx(0.7) and back.elevation == pytest.approx(0.9)
    assert back.radius == pytest.approx(0.45)


def test_select_real_views_construction():
    grid = quarter_sphere_grid(INTR, 16, 16, target=TARGET)
    assert select_real_views(grid, 1, start=37, n_azimuth=16)[0] is grid[37]
    run = select_real_views(grid, 3, start=0, n_azimuth=16)
    assert all(a is b for a, b in zip(run, grid[0:3]))
    el = {round(spherical_coords(c, TARGET).elevation, 12) for c in run}
    assert len(el) == 1
    # a run that would leave the ring shifts back onto it
    assert all(a is b for a, b in zip(select_real_views(grid, 3, start=15, n_azimuth=16), grid[13:16]))
    with pytest.raises(ViewConfigError):
        select_real_views(grid, 257)
    with pytest.raises(ViewConfigError):
        select_real_views(grid, 17, n_azimuth=16)


@pytest.mark.parametrize("start", [0, 5, 40, 250])
def test_selected_views_are_adjacent_on_their_ring(start):
    grid = quarter_sphere_grid(INTR, 16, 16, target=TARGET)
    run = select_real_views(grid, 3, start=start, n_azimuth=16)
    first = next(i for i, c in enumerate(grid) if c is run[0])
    ring = grid[first // 16 * 16:first // 16 * 16 + 16]
    centroid = run[1]
    spread = max(great_circle(centroid, c) for c in run)
    others = [c for c in ring if not any(c is r for r in run)]
    assert spread < min(great_circle(centroid, c) for c in others)


def _real_views():
    grid = quarter_sphere_grid(INTR, 16, 16, target=TARGET)
    return select_real_views(grid, 3, start=5 * 16 + 4, n_azimuth=16)


def test_novel_views_zero_offsets_rejected():
    with pytest.raises(ViewConfigError):
        sample_novel_views(_real_views(), 4, 0.0, 0.0, 0.0, target=TARGET)
    with pytest.raises(ViewConfigError):
        sample_novel_views(_real_views(), 4, -0.1, target=TARGET)


def test_novel_views_round_robin_and_bounds():
    real = _real_views()
    az, el = np.radians(10.0), np.radians(7.5)
    novel = sample_novel_views(real, 16, az, el, 0.05, seed=3, target=TARGET)
    assert len(novel) == 16
    assert parent_counts(3, 16) == [6, 5, 5]
    real_axes = [c.optical_axis for c in real]
    for i, cam in enumerate(novel):
        parent = real[i % 3]
        assert vector_angle(cam.optical_axis, parent.optical_axis) <= az + el
        assert min(vector_angle(cam.optical_axis, a) for a in real_axes) >= 1e-3
        assert cam.optical_axis[2] < 0 and cam.center[2] > 0
        assert abs(np.linalg.norm(cam.center - TARGET) - np.linalg.norm(parent.center - TARGET)) <= 0.05 + 1e-12
        uv, _ = cam.project(TARGET[None])
        assert np.abs(uv[0] - [cam.cx, cam.cy]).max() < 0.5


def test_novel_views_are_reproducible():
    real = _real_views()
    a = sample_novel_views(real, 8, seed=11, target=TARGET)
    b = sample_novel_views(real, 8, seed=11, target=TARGET)
    c = sample_novel_views(real, 8, seed=12, target=TARGET)
    assert all(x.to_dict() == y.to_dict() for x, y in zip(a, b))
    assert any(x.to_dict() != y.to_dict() for x, y in zip(a, c))
    assert sample_novel_views(real, 0) == []
