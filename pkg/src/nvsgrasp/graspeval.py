"""Force-closure evaluation of grasps against the analytic scene, grasp
coverage and the extra grasps / objects contributed by novel views."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Set, Tuple

import numpy as np

from .geometry import vector_angle
from .graspgen import Grasp, GraspSet, GripperSpec
from .graspost import BRANCHES, TAG_ORDER
from .synthscene import SceneSpec, cast_rays

DEFAULT_MUS = (0.2, 0.4, 0.6, 0.8, 1.0)
CONTACT_GAP = 1e-9


@dataclass(frozen=True)
class ContactPair:
    """Two contacts with inward unit normals and the ids of the touched objects
    (0 is the table)."""
    c1: np.ndarray
    c2: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    id1: int
    id2: int


@dataclass(frozen=True)
class FrictionSweep:
    coefficients: Tuple[float, ...] = DEFAULT_MUS

    def __post_init__(self):
        mus = tuple(float(m) for m in self.coefficients)
        if not mus or min(mus) <= 0 or any(b <= a for a, b in zip(mus, mus[1:])):
            raise ValueError("friction coefficients must be positive and strictly increasing")
        object.__setattr__(self, "coefficients", mus)


def contact_rays(rotations: np.ndarray, translations: np.ndarray, widths: np.ndarray):
    """Finger ray origins and directions, shape (n, 2, 3): finger 1 starts at
    -width/2 along the closing axis and moves +y, finger 2 the reverse."""
    y = rotations[:, :, 1]
    half = (widths / 2)[:, None]
    origins = np.stack([translations - half * y, translations + half * y], axis=1)
    dirs = np.stack([y, -y], axis=1)
    return origins, dirs


def compute_contacts_batch(gs: GraspSet, scene: SceneSpec):
    """Vectorized contacts for a grasp set.

    Returns a dict of arrays: ``valid`` (n,), ``points`` (n,2,3), inward
    ``normals`` (n,2,3) and ``ids`` (n,2) (-1 where a finger missed).
    """
    n = len(gs)
    if n == 0:
        return {"valid": np.zeros(0, bool), "points": np.zeros((0, 2, 3)),
                "normals": np.zeros((0, 2, 3)), "ids": np.zeros((0, 2), np.int64)}
    origins, dirs = contact_rays(gs.rotations, gs.translations, gs.widths)
    t, pts, nrm, lab, _ = cast_rays(scene, origins.reshape(-1, 3), dirs.reshape(-1, 3))
    t = t.reshape(n, 2)
    hit = np.isfinite(t) & (t <= gs.widths[:, None])
    ids = np.where(hit, lab.reshape(n, 2), -1)
    # a fingertip starting inside a solid exits where the other finger enters;
    # the contacts must be distinct and in order along the closing axis
    ordered = t.sum(axis=1) < gs.widths - CONTACT_GAP
    return {"valid": hit.all(axis=1) & ordered, "points": pts.reshape(n, 2, 3),
            "normals": -nrm.reshape(n, 2, 3), "ids": ids}


def compute_contacts(grasp: Grasp, gripper: GripperSpec, scene: SceneSpec) -> Optional[ContactPair]:
    """Close both fingers along the grasp's closing axis and report the first
    surface each touches, or None if either finger closes on nothing."""
    gs = GraspSet([grasp.pose.rotation], [grasp.pose.translation], [grasp.width], [grasp.score],
                  [grasp.view_id], [grasp.source], "G_real" if grasp.source == "real" else "G_nvs")
    c = compute_contacts_batch(gs, scene)
    if not c["valid"][0]:
        return None
    p, nrm, ids = c["points"][0], c["normals"][0], c["ids"][0]
    return ContactPair(p[0], p[1], nrm[0], nrm[1], int(ids[0]), int(ids[1]))


def contact_angles(c1, c2, n1, n2):
    """Angles between each contact line and its inward normal."""
    c1, c2 = np.asarray(c1, float), np.asarray(c2, float)
    return vector_angle(c2 - c1, n1), vector_angle(c1 - c2, n2)


def force_closure(contacts: ContactPair, mu: float) -> bool:
    """Two frictional point contacts on the same object with the grasp line
    inside both friction cones."""
    if contacts.id1 != contacts.id2:
        return False
    a1, a2 = contact_angles(contacts.c1, contacts.c2, contacts.n1, contacts.n2)
    half = np.arctan(mu)
    return bool(a1 <= half and a2 <= half)


def min_friction(a1, a2) -> np.ndarray:
    """Smallest friction coefficient giving force closure for the given contact angles."""
    return np.tan(np.maximum(a1, a2))


def fc_sweep(grasp: Grasp, gripper: GripperSpec, scene: SceneSpec,
             sweep: FrictionSweep = FrictionSweep()) -> Tuple[bool, Optional[float]]:
    """Force closure under any coefficient of the sweep, with the smallest passing one."""
    contacts = compute_contacts(grasp, gripper, scene)
    if contacts is None:
        return False, None
    for mu in sweep.coefficients:
        if force_closure(contacts, mu):
            return True, mu
    return False, None


@dataclass
class GraspEvaluation:
    """Per-grasp results: ``fc`` verdicts, smallest passing coefficient (nan
    if none) and the object id of the first contact (-1 without contacts)."""
    fc: np.ndarray
    min_mu: np.ndarray
    object_id: np.ndarray


def evaluate_grasps(gs: GraspSet, scene: SceneSpec, sweep: FrictionSweep = FrictionSweep()) -> GraspEvaluation:
    c = compute_contacts_batch(gs, scene)
    n = len(gs)
    fc = np.zeros(n, bool)
    min_mu = np.full(n, np.nan)
    if n:
        p, nrm, ids = c["points"], c["normals"], c["ids"]
        a1, a2 = contact_angles(p[:, 0], p[:, 1], nrm[:, 0], nrm[:, 1])
        same = c["valid"] & (ids[:, 0] == ids[:, 1])
        for mu in reversed(sweep.coefficients):
            half = np.arctan(mu)
            ok = same & (a1 <= half) & (a2 <= half)
            min_mu = np.where(ok, mu, min_mu)
            fc |= ok
    obj = np.where(c["valid"], c["ids"][:, 0], -1) if n else np.zeros(0, np.int64)
    return GraspEvaluation(fc, min_mu, obj)


def grasp_coverage(fc_object_ids, scene: SceneSpec) -> Tuple[float, Set[int]]:
    """Percent of scene objects with at least one force-closure grasp."""
    k = len(scene.primitives)
    if k < 1:
        raise ValueError("coverage needs a scene with at least one object")
    covered = {int(i) for i in np.asarray(fc_object_ids).ravel()} & set(scene.object_ids)
    return 100.0 * len(covered) / k, covered


def coverage_percent(n_covered: int, n_objects: int) -> float:
    """Coverage rounded to two decimals as reported in tables."""
    return round(100.0 * n_covered / n_objects, 2)


@dataclass
class BranchResult:
    branch: str
    tag: str
    grasp_count: int
    fc_count: int
    fc_per_object: Dict[int, int]
    coverage_percent: float
    covered_objects: List[int]
    nvs_fc_count: int = 0

    def to_dict(self) -> dict:
        return {"branch": self.branch, "tag": self.tag, "grasp_count": self.grasp_count,
                "fc_count": self.fc_count,
                "fc_per_object": {str(k): v for k, v in sorted(self.fc_per_object.items())},
                "coverage_percent": self.coverage_percent, "covered_objects": self.covered_objects,
                "nvs_fc_count": self.nvs_fc_count}

    @classmethod
    def from_dict(cls, d: dict) -> "BranchResult":
        return cls(d["branch"], d["tag"], int(d["grasp_count"]), int(d["fc_count"]),
                   {int(k): int(v) for k, v in d["fc_per_object"].items()}, float(d["coverage_percent"]),
                   [int(i) for i in d["covered_objects"]], int(d.get("nvs_fc_count", 0)))


def branch_result(branch: str, tag: str, gs: GraspSet, ev: GraspEvaluation, scene: SceneSpec) -> BranchResult:
    fc_ids = ev.object_id[ev.fc]
    pct, covered = grasp_coverage(fc_ids, scene)
    per_obj = {oid: int(np.sum(fc_ids == oid)) for oid in scene.object_ids}
    return BranchResult(branch, tag, len(gs), int(ev.fc.sum()), per_obj, round(pct, 2), sorted(covered),
                        int(np.sum(ev.fc & (gs.sources == "nvs"))))


def nvs_gain_stats(results: Mapping[Tuple[str, str], BranchResult]) -> Dict[str, dict]:
    """Per branch: force-closure grasps and covered objects that real+nvs adds
    over real alone. ``nvs_fc_survivors`` counts novel-view grasps that are
    force-closure inside the joint set (the alternative gain definition)."""
    gains = {}
    for branch in BRANCHES:
        real = results.get((branch, "G_real"))
        joint = results.get((branch, "G_real_nvs"))
        if real is None or joint is None:
            continue
        added = sorted(set(joint.covered_objects) - set(real.covered_objects))
        gains[branch] = {"fc_gain": joint.fc_count - real.fc_count,
                         "coverage_gain": len(added),
                         "objects_added": added,
                         "nvs_fc_survivors": joint.nvs_fc_count}
    return gains


def evaluate_branches(branches: Mapping[Tuple[str, str], GraspSet], scene: SceneSpec,
                      sweep: FrictionSweep = FrictionSweep()) -> Dict[Tuple[str, str], BranchResult]:
    """Force closure and coverage for every branch x tag, in (branch, tag) order."""
    out = {}
    for branch in BRANCHES:
        for tag in TAG_ORDER:
            gs = branches[(branch, tag)]
            out[(branch, tag)] = branch_result(branch, tag, gs, evaluate_grasps(gs, scene, sweep), scene)
    return out
