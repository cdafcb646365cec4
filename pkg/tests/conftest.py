import numpy as np
import pytest

from nvsgrasp.geometry import PinholeCamera, RigidTransform, axis_angle_matrix, look_at
from nvsgrasp.synthscene import Primitive, SceneSpec, Table


def sph(az_deg, el_deg, r=0.5, target=(0.0, 0.0, 0.0)):
    az, el = np.radians(az_deg), np.radians(el_deg)
    return np.asarray(target) + r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def camera_at(az_deg, el_deg, r=0.5, size=64, fov=50.0, target=(0.0, 0.0, 0.0)):
    return PinholeCamera.from_fov(size, size, fov).with_pose(look_at(sph(az_deg, el_deg, r, target), target))


def three_primitive_scene(half_extent=0.3):
    prims = (
        Primitive("sphere", RigidTransform(np.eye(3), [0.03, -0.04, 0.03]), (0.03,), (0.85, 0.25, 0.2), 1),
        Primitive("box", RigidTransform(axis_angle_matrix([0, 0, 1], 0.4), [-0.05, 0.04, 0.025]),
                  (0.03, 0.02, 0.025), (0.2, 0.6, 0.85), 2),
        Primitive("cylinder", RigidTransform(np.eye(3), [0.06, 0.06, 0.04]), (0.02, 0.04), (0.25, 0.75, 0.3), 3),
    )
    return SceneSpec(prims, Table(half_extent=half_extent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    return three_primitive_scene()


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
