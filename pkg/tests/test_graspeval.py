import math

import numpy as np
import pytest

from nvsgrasp.geometry import RigidTransform, axis_angle_matrix, random_rotation
from nvsgrasp.graspeval import (BranchResult, ContactPair, FrictionSweep, compute_contacts, coverage_percent,
                                evaluate_grasps, fc_sweep, force_closure, grasp_coverage, min_friction,
                                nvs_gain_stats)
from nvsgrasp.graspgen import Grasp, GraspSet, GripperSpec
from nvsgrasp.synthscene import Primitive, SceneSpec

from conftest import three_primitive_scene

GRIP = GripperSpec()
CENTER = np.array([0.0, 0.0, 0.1])


def sphere_scene(r=0.05, center=CENTER):
    return SceneSpec((Primitive("sphere", RigidTransform(np.eye(3), center), (r,), (1, 1, 1), 1),), table=None)


def chord_grasp(r, h, center=CENTER):
    """Closing line along +y, offset h from the center along z."""
    return Grasp(RigidTransform(np.eye(3), center + [0, 0, h]), 2 * r + 0.01, 1.0, 0, "real")


def test_diametric_sphere_grasp():
    r = 0.05
    c = compute_contacts(chord_grasp(r, 0.0), GRIP, sphere_scene(r))
    np.testing.assert_allclose(c.c1, CENTER - [0, r, 0], atol=1e-12)
    np.testing.assert_allclose(c.c2, CENTER + [0, r, 0], atol=1e-12)
    np.testing.assert_allclose(c.n1, [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(c.n2, [0, -1, 0], atol=1e-12)
    assert c.id1 == c.id2 == 1
    assert force_closure(c, 0.2)


def test_thirty_degree_chord():
    c = compute_contacts(chord_grasp(0.05, 0.025), GRIP, sphere_scene(0.05))
    verdicts = [force_closure(c, mu) for mu in (0.2, 0.4, 0.6, 0.8, 1.0)]
    assert verdicts == [False, False, True, True, True]
    assert fc_sweep(chord_grasp(0.05, 0.025), GRIP, sphere_scene(0.05)) == (True, 0.6)


def test_forty_six_degree_contact_fails_at_mu_one():
    r = 0.05
    g = chord_grasp(r, r * math.sin(math.radians(46)))
    assert fc_sweep(g, GRIP, sphere_scene(r), FrictionSweep((1.0,))) == (False, None)


def test_sphere_chord_sweep_matches_closed_form():
    r = 0.05
    scene = sphere_scene(r)
    thetas = np.linspace(0, np.radians(80), 161)
    rots = [np.eye(3), axis_angle_matrix([0, 1, 0], 0.7)]
    for theta in thetas:
        for R in rots:
            # offset perpendicular to the closing axis, inside the approach-normal plane
            h = r * math.sin(theta)
            g = Grasp(RigidTransform(R, CENTER + h * R[:, 2]), 2 * r + 0.01, 1.0, 0, "real")
            c = compute_contacts(g, GRIP, scene)
            for mu in (0.2, 0.4, 0.6, 0.8, 1.0):
                if abs(theta - math.atan(mu)) < 1e-9:
                    continue
                assert force_closure(c, mu) == (theta <= math.atan(mu))


def test_contacts_on_different_objects_fail():
    c = ContactPair(np.zeros(3), np.array([0, 0.05, 0]), np.array([0, 1.0, 0]), np.array([0, -1.0, 0]), 1, 2)
    assert not any(force_closure(c, mu) for mu in (0.2, 1.0, 10.0))


def test_free_space_grasp_has_no_contacts():
    g = Grasp(RigidTransform(np.eye(3), [0.5, 0.5, 0.5]), 0.04, 1.0, 0, "real")
    assert compute_contacts(g, GRIP, sphere_scene()) is None
    assert fc_sweep(g, GRIP, sphere_scene()) == (False, None)


def test_surface_beyond_the_closing_stroke_is_missed():
    g = Grasp(RigidTransform(np.eye(3), CENTER + [0, 0.2, 0]), 0.04, 1.0, 0, "real")
    assert compute_contacts(g, GRIP, sphere_scene()) is None


def test_fingertip_inside_the_object_is_rejected():
    # finger 2 starts inside the sphere and would exit where finger 1 enters
    g = Grasp(RigidTransform(np.eye(3), CENTER + [0, -0.06, 0]), 0.04, 1.0, 0, "real")
    assert compute_contacts(g, GRIP, sphere_scene()) is None


def test_box_contacts_lie_on_faces(rng):
    dims = np.array([0.03, 0.02, 0.04])
    pose = RigidTransform(random_rotation(rng), [0.01, -0.02, 0.1])
    scene = SceneSpec((Primitive("box", pose, tuple(dims), (1, 1, 1), 1),), table=None)
    n = 300
    gs = GraspSet(np.stack([random_rotation(rng) for _ in range(n)]),
                  pose.translation + rng.normal(scale=0.01, size=(n, 3)), np.full(n, 0.2), np.ones(n),
                  np.zeros(n, int), ["real"] * n)
    hits = 0
    for g in gs:
        c = compute_contacts(g, GRIP, scene)
        if c is None:
            continue
        hits += 1
        for p in (c.c1, c.c2):
            local = pose.apply_inverse(p)
            assert np.all(np.abs(local) <= dims + 1e-6)
            assert np.min(np.abs(np.abs(local) - dims)) <= 1e-6
    assert hits > 0.9 * n


def test_force_closure_monotone_in_mu(rng):
    mus = np.sort(rng.uniform(0.05, 2.0, 12))
    for _ in range(1000):
        c1, c2 = rng.normal(size=3), rng.normal(size=3)
        n1, n2 = rng.normal(size=3), rng.normal(size=3)
        c = ContactPair(c1, c2, n1 / np.linalg.norm(n1), n2 / np.linalg.norm(n2), 1, 1)
        v = [force_closure(c, mu) for mu in mus]
        assert all(b or not a for a, b in zip(v, v[1:]))


def test_min_friction_agrees_with_verdict(rng):
    for _ in range(200):
        a1, a2 = rng.uniform(0, 1.2, 2)
        mu = float(rng.uniform(0.05, 2.0))
        assert (max(a1, a2) <= math.atan(mu)) == (min_friction(a1, a2) <= mu + 1e-12)


def test_verdict_invariant_under_rigid_motion(rng):
    scene = three_primitive_scene()
    n = 200
    gs = GraspSet(np.stack([random_rotation(rng) for _ in range(n)]),
                  scene.primitives[int(rng.integers(3))].pose.translation + rng.normal(scale=0.015, size=(n, 3)),
                  rng.uniform(0.03, 0.08, n), np.ones(n), np.zeros(n, int), ["real"] * n)
    T = RigidTransform(random_rotation(rng), rng.normal(scale=0.3, size=3))
    moved = SceneSpec(tuple(Primitive(p.kind, T.compose(p.pose), p.dimensions, p.albedo, p.object_id)
                            for p in scene.primitives), table=None)
    still = SceneSpec(scene.primitives, table=None)
    gs2 = GraspSet(np.einsum("ij,njk->nik", T.rotation, gs.rotations), T.apply(gs.translations), gs.widths,
                   gs.scores, gs.view_ids, gs.sources)
    a, b = evaluate_grasps(gs, still), evaluate_grasps(gs2, moved)
    assert a.fc.sum() > 0
    np.testing.assert_array_equal(a.fc, b.fc)
    np.testing.assert_array_equal(a.object_id, b.object_id)


def test_coverage_arithmetic():
    assert coverage_percent(7, 9) == 77.78
    assert coverage_percent(9, 9) == 100.0
    assert coverage_percent(0, 9) == 0.0
    scene = three_primitive_scene()
    assert grasp_coverage([], scene) == (0.0, set())
    pct, cov = grasp_coverage([1, 3, 3, 0], scene)
    assert cov == {1, 3} and pct == pytest.approx(200 / 3)
    assert grasp_coverage([1, 2, 3], scene)[0] == 100.0
    with pytest.raises(ValueError):
        grasp_coverage([], SceneSpec((), table=None))


def _result(branch, tag, fc, covered):
    return BranchResult(branch, tag, fc, fc, {}, coverage_percent(len(covered), 9), sorted(covered))


def test_gain_statistics():
    same = {("asis", "G_real"): _result("asis", "G_real", 5, {1, 2}),
            ("asis", "G_real_nvs"): _result("asis", "G_real_nvs", 5, {1, 2})}
    g = nvs_gain_stats(same)["asis"]
    assert g["fc_gain"] == 0 and g["coverage_gain"] == 0
    more = {("asis", "G_real"): _result("asis", "G_real", 5, {1, 2}),
            ("asis", "G_real_nvs"): _result("asis", "G_real_nvs", 12, {1, 2, 3, 4})}
    g = nvs_gain_stats(more)["asis"]
    assert g["fc_gain"] == 7 and g["coverage_gain"] == 2 and g["objects_added"] == [3, 4]
    # a joint set that lost an object still adds only what is new
    shifted = {("nms", "G_real"): _result("nms", "G_real", 5, {1, 2}),
               ("nms", "G_real_nvs"): _result("nms", "G_real_nvs", 4, {2, 5})}
    assert nvs_gain_stats(shifted)["nms"]["coverage_gain"] == 1


def test_friction_sweep_validation():
    assert FrictionSweep().coefficients == (0.2, 0.4, 0.6, 0.8, 1.0)
    for bad in ((), (0.4, 0.2), (0.0, 0.5), (0.2, 0.2)):
        with pytest.raises(ValueError):
            FrictionSweep(bad)


def test_branch_result_round_trip():
    r = BranchResult("nms", "G_nvs", 10, 4, {1: 3, 2: 1}, 22.22, [1, 2], 4)
    assert BranchResult.from_dict(r.to_dict()) == r
