import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvsgrasp.geometry import (GeometryError, InputShapeError, PinholeCamera, PointCloud, RigidTransform,
                               axis_angle_matrix, depth_normals, look_at, pairwise_rotation_distance,
                               quaternion_to_matrix, random_rotation, rotation_geodesic_distance, unproject,
                               vector_angle)

from conftest import camera_at

quaternions = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1)


def quaternion_distance(qa, qb):
    qa = np.asarray(qa) / np.linalg.norm(qa)
    qb = np.asarray(qb) / np.linalg.norm(qb)
    return 2.0 * np.arccos(min(1.0, abs(float(qa @ qb))))


def test_rigid_transform_rejects_non_rotation():
    with pytest.raises(GeometryError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(GeometryError):
        RigidTransform(np.eye(3) * 1.001)


def test_rigid_transform_inverse_and_compose(rng):
    a = RigidTransform(random_rotation(rng), rng.normal(size=3))
    b = RigidTransform(random_rotation(rng), rng.normal(size=3))
    p = rng.normal(size=(20, 3))
    np.testing.assert_allclose(a.inverse().apply(a.apply(p)), p, atol=1e-12)
    np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)
    np.testing.assert_allclose(a.matrix() @ b.matrix(), a.compose(b).matrix(), atol=1e-12)
    np.testing.assert_allclose(a.apply_inverse(p), a.inverse().apply(p), atol=1e-12)


def test_rigid_transform_dict_round_trip(rng):
    a = RigidTransform(random_rotation(rng), rng.normal(size=3))
    b = RigidTransform.from_dict(json.loads(json.dumps(a.to_dict())))
    assert np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)


def test_geodesic_distance_simple_cases():
    assert rotation_geodesic_distance(np.eye(3), np.eye(3)) == 0.0
    Rz = axis_angle_matrix([0, 0, 1], np.radians(15))
    assert rotation_geodesic_distance(np.eye(3), Rz) == pytest.approx(0.261799, abs=1e-6)


def test_geodesic_distance_matches_quaternion_oracle(rng):
    for _ in range(100):
        qa, qb = rng.normal(size=4), rng.normal(size=4)
        d = rotation_geodesic_distance(quaternion_to_matrix(qa), quaternion_to_matrix(qb))
        assert abs(d - quaternion_distance(qa, qb)) < 1e-9


@settings(max_examples=200, deadline=None)
@given(quaternions, quaternions, quaternions)
def test_geodesic_distance_is_a_metric(qa, qb, qc):
    Ra, Rb, Rc = (quaternion_to_matrix(q) for q in (qa, qb, qc))
    dab = rotation_geodesic_distance(Ra, Rb)
    assert dab >= 0
    assert dab == pytest.approx(rotation_geodesic_distance(Rb, Ra), abs=1e-12)
    assert rotation_geodesic_distance(Ra, Rc) <= dab + rotation_geodesic_distance(Rb, Rc) + 1e-6


def test_geodesic_symmetric_option_folds_jaw_flip(rng):
    R = random_rotation(rng)
    flipped = R @ axis_angle_matrix([1, 0, 0], np.pi)
    assert rotation_geodesic_distance(R, flipped) == pytest.approx(np.pi)
    assert rotation_geodesic_distance(R, flipped, symmetric=True) < 1e-6


def test_pairwise_distance_agrees_with_scalar(rng):
    A = np.stack([random_rotation(rng) for _ in range(6)])
    B = np.stack([random_rotation(rng) for _ in range(5)])
    for sym in (False, True):
        D = pairwise_rotation_distance(A, B, symmetric=sym)
        ref = np.array([[rotation_geodesic_distance(a, b, symmetric=sym) for b in B] for a in A])
        np.testing.assert_allclose(D, ref, atol=1e-12)


def test_vector_angle_is_accurate_near_zero_and_pi():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([1.0, 1e-10, 0.0])
    assert vector_angle(a, b) == pytest.approx(1e-10, rel=1e-6)
    assert vector_angle(a, -b) == pytest.approx(np.pi - 1e-10, abs=1e-15)


def test_look_at_simple_case():
    pose = look_at([0, 0, 1], [0, 0, 0], up=[0, 1, 0])
    np.testing.assert_allclose(pose.rotation[:, 2], [0, 0, -1], atol=1e-15)


def test_look_at_degenerate_inputs():
    with pytest.raises(GeometryError):
        look_at([0, 0, 1], [0, 0, 1])
    with pytest.raises(GeometryError):
        look_at([0, 0, 1], [0, 0, 0], up=[0, 0, 1])


def test_look_at_random_targets_lie_on_optical_axis(rng):
    for _ in range(100):
        eye, target = rng.normal(size=3), rng.normal(size=3)
        pose = look_at(eye, target)
        local = pose.apply_inverse(target)
        assert abs(local[0]) < 1e-9 and abs(local[1]) < 1e-9 and local[2] > 0
        R = pose.rotation
        assert np.abs(R.T @ R - np.eye(3)).max() <= 1e-9
        assert abs(np.linalg.det(R) - 1.0) <= 1e-9


def test_camera_invariants():
    with pytest.raises(GeometryError):
        PinholeCamera(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(GeometryError):
        PinholeCamera(1.0, 1.0, 4.0, 1.0, 4, 4)
    cam = camera_at(30, 40)
    assert PinholeCamera.from_dict(json.loads(json.dumps(cam.to_dict()))).to_dict() == cam.to_dict()


def test_unproject_principal_point():
    cam = PinholeCamera(100.0, 100.0, 2.0, 3.0, 5, 7)
    depth = np.zeros((7, 5))
    depth[3, 2] = 0.5
    cloud = unproject(depth, cam)
    np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 0.5]])


def test_unproject_empty_and_shape_errors():
    cam = camera_at(0, 45, size=16)
    assert len(unproject(np.zeros((16, 16)), cam)) == 0
    with pytest.raises(InputShapeError):
        unproject(np.zeros((15, 16)), cam)


def test_unproject_project_round_trip(rng):
    cam = camera_at(20, 50, size=48)
    depth = rng.uniform(0.2, 2.0, size=(48, 48))
    depth[rng.random((48, 48)) < 0.3] = 0.0
    color = rng.random((48, 48, 3))
    cloud = unproject(depth, cam, color=color)
    uv, z = cam.project(cloud.points)
    v, u = np.nonzero(depth > 0)
    assert np.abs(uv - np.column_stack([u, v])).max() < 0.5
    assert np.abs(z - depth[v, u]).max() < 1e-6
    np.testing.assert_array_equal(cloud.colors, color[v, u])


def test_unproject_stride():
    cam = camera_at(0, 45, size=16)
    cloud = unproject(np.ones((16, 16)), cam, stride=4)
    assert len(cloud) == 16


def test_point_cloud_normals_must_be_unit():
    with pytest.raises(GeometryError):
        PointCloud(np.zeros((2, 3)), normals=np.ones((2, 3)))
    both = PointCloud.concatenate([PointCloud(np.zeros((2, 3)), labels=[1, 2]),
                                   PointCloud(np.ones((1, 3)), labels=[3])])
    assert len(both) == 3 and list(both.labels) == [1, 2, 3]


def test_depth_normals_of_a_plane_face_the_camera():
    cam = PinholeCamera.from_fov(32, 32, 60)
    depth = np.full((32, 32), 0.7)
    n = depth_normals(depth, cam)
    inner = n[1:-1, 1:-1].reshape(-1, 3)
    np.testing.assert_allclose(inner, np.tile([0, 0, -1.0], (len(inner), 1)), atol=1e-9)
    assert np.all(n[0] == 0)
