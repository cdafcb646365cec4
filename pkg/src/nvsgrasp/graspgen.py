"""Parallel-jaw grasps, grasp sets, a geometric antipodal proposer and
grasp JSON import/export.

Gripper frame: +x is the approach direction, +y the closing direction, and
the origin sits midway between the fingertips. Fingers extend from the
origin plane back toward the palm (negative x).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import ORTHO_TOL, PointCloud, RigidTransform, vector_angle

SOURCES = ("real", "nvs")
TAGS = ("G_real", "G_nvs", "G_real_nvs")
DOWN = np.array([0.0, 0.0, -1.0])


class GraspInputError(ValueError):
    pass


class GraspValidationError(ValueError):
    """Raised with the offending record indices in ``records``."""

    def __init__(self, message: str, records: Sequence[int]):
        super().__init__(message)
        self.records = list(records)


@dataclass(frozen=True)
class GripperSpec:
    max_width: float = 0.08
    finger_length: float = 0.04
    finger_thickness: float = 0.01
    palm_clearance: float = 0.005

    def __post_init__(self):
        if min(self.max_width, self.finger_length, self.finger_thickness, self.palm_clearance) <= 0:
            raise ValueError("gripper dimensions must be positive")

    def to_dict(self) -> dict:
        return {"max_width": self.max_width, "finger_length": self.finger_length,
                "finger_thickness": self.finger_thickness, "palm_clearance": self.palm_clearance}


@dataclass(frozen=True)
class Grasp:
    pose: RigidTransform
    width: float
    score: float
    view_id: int
    source: str

    def __post_init__(self):
        if not self.width > 0:
            raise GraspInputError("grasp width must be positive")
        if self.source not in SOURCES:
            raise GraspInputError(f"grasp source must be one of {SOURCES}")

    @property
    def approach(self) -> np.ndarray:
        return self.pose.rotation[:, 0]

    @property
    def closing(self) -> np.ndarray:
        return self.pose.rotation[:, 1]


class GraspSet:
    """Grasps held as parallel arrays, with the set's tag.

    ``contacts`` and ``contact_normals`` ((n, 2, 3), outward normals) are
    carried along when the proposer produced the grasps; they are not part of
    the JSON exchange format.
    """

    def __init__(self, rotations=None, translations=None, widths=None, scores=None,
                 view_ids=None, sources=None, tag: str = "G_real",
                 contacts=None, contact_normals=None):
        self.rotations = np.zeros((0, 3, 3)) if rotations is None else np.asarray(rotations, float).reshape(-1, 3, 3)
        n = len(self.rotations)
        self.translations = np.zeros((0, 3)) if translations is None else np.asarray(translations, float).reshape(n, 3)
        self.widths = np.zeros(0) if widths is None else np.asarray(widths, float).reshape(n)
        self.scores = np.zeros(0) if scores is None else np.asarray(scores, float).reshape(n)
        self.view_ids = np.zeros(0, np.int64) if view_ids is None else np.asarray(view_ids, np.int64).reshape(n)
        self.sources = np.zeros(0, dtype="<U4") if sources is None else np.asarray(sources, dtype="<U4").reshape(n)
        self.contacts = None if contacts is None else np.asarray(contacts, float).reshape(n, 2, 3)
        self.contact_normals = None if contact_normals is None else np.asarray(contact_normals, float).reshape(n, 2, 3)
        if tag not in TAGS:
            raise GraspInputError(f"unknown tag {tag!r}")
        self.tag = tag
        if tag == "G_real" and np.any(self.sources != "real"):
            raise GraspInputError("G_real sets may only hold real-view grasps")
        if tag == "G_nvs" and np.any(self.sources != "nvs"):
            raise GraspInputError("G_nvs sets may only hold novel-view grasps")

    @classmethod
    def empty(cls, tag: str = "G_real") -> "GraspSet":
        return cls(tag=tag)

    @classmethod
    def from_grasps(cls, grasps: Iterable[Grasp], tag: str) -> "GraspSet":
        grasps = list(grasps)
        if not grasps:
            return cls.empty(tag)
        return cls([g.pose.rotation for g in grasps], [g.pose.translation for g in grasps],
                   [g.width for g in grasps], [g.score for g in grasps],
                   [g.view_id for g in grasps], [g.source for g in grasps], tag)

    def __len__(self) -> int:
        return len(self.rotations)

    def __getitem__(self, i: int) -> Grasp:
        return Grasp(RigidTransform(self.rotations[i], self.translations[i]), float(self.widths[i]),
                     float(self.scores[i]), int(self.view_ids[i]), str(self.sources[i]))

    def __iter__(self) -> Iterator[Grasp]:
        return (self[i] for i in range(len(self)))

    def take(self, idx, tag: Optional[str] = None) -> "GraspSet":
        idx = np.asarray(idx, dtype=np.int64)
        return GraspSet(self.rotations[idx], self.translations[idx], self.widths[idx], self.scores[idx],
                        self.view_ids[idx], self.sources[idx], tag or self.tag,
                        None if self.contacts is None else self.contacts[idx],
                        None if self.contact_normals is None else self.contact_normals[idx])

    def retag(self, tag: str) -> "GraspSet":
        return self.take(np.arange(len(self)), tag)

    def records(self) -> List[dict]:
        return [{"rotation": [float(v) for v in self.rotations[i].reshape(-1)],
                 "translation": [float(v) for v in self.translations[i]],
                 "width": float(self.widths[i]), "score": float(self.scores[i]),
                 "view_id": int(self.view_ids[i]), "source": str(self.sources[i])}
                for i in range(len(self))]

    def to_json(self) -> str:
        return json.dumps({"tag": self.tag, "grasps": self.records()})

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    def same_values(self, other: "GraspSet", atol: float = 0.0) -> bool:
        return (len(self) == len(other)
                and np.allclose(self.rotations, other.rotations, rtol=0, atol=atol)
                and np.allclose(self.translations, other.translations, rtol=0, atol=atol)
                and np.allclose(self.widths, other.widths, rtol=0, atol=atol)
                and np.allclose(self.scores, other.scores, rtol=0, atol=atol)
                and np.array_equal(self.view_ids, other.view_ids)
                and np.array_equal(self.sources, other.sources))


def concatenate(sets: Sequence[GraspSet], tag: str) -> GraspSet:
    sets = [s for s in sets]
    if not sets:
        return GraspSet.empty(tag)
    has_c = all(s.contacts is not None for s in sets)
    return GraspSet(np.concatenate([s.rotations for s in sets]),
                    np.concatenate([s.translations for s in sets]),
                    np.concatenate([s.widths for s in sets]),
                    np.concatenate([s.scores for s in sets]),
                    np.concatenate([s.view_ids for s in sets]),
                    np.concatenate([s.sources for s in sets]), tag,
                    np.concatenate([s.contacts for s in sets]) if has_c else None,
                    np.concatenate([s.contact_normals for s in sets]) if has_c else None)


# ---------------------------------------------------------------------------
# JSON import


def parse_grasps(doc, view_id: Optional[int] = None, source: Optional[str] = None,
                 tag: Optional[str] = None) -> GraspSet:
    """Validate a decoded grasp document. ``view_id`` / ``source``, when given,
    are assigned to every record; otherwise each record must carry them."""
    if not isinstance(doc, dict) or not isinstance(doc.get("grasps"), list):
        raise GraspInputError("grasp document must be an object with a 'grasps' array")
    bad: List[int] = []
    reasons: List[str] = []
    rows = []
    for i, rec in enumerate(doc["grasps"]):
        try:
            R = np.asarray(rec["rotation"], dtype=float)
            t = np.asarray(rec["translation"], dtype=float)
            if R.size != 9 or t.size != 3:
                raise ValueError("rotation needs 9 and translation 3 numbers")
            R = R.reshape(3, 3)
            if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
                raise ValueError("non-finite pose")
            if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1) > ORTHO_TOL:
                raise ValueError("rotation is not orthonormal with det +1")
            w = float(rec["width"])
            sc = float(rec["score"])
            if not w > 0:
                raise ValueError("width must be positive")
            if not 0.0 <= sc <= 1.0:
                raise ValueError("score must lie in [0, 1]")
            vid = int(view_id if view_id is not None else rec["view_id"])
            src = source if source is not None else rec["source"]
            if src not in SOURCES:
                raise ValueError(f"source must be one of {SOURCES}")
        except (KeyError, TypeError, ValueError) as e:
            bad.append(i)
            reasons.append(f"record {i}: {e}")
            continue
        rows.append((R, t, w, sc, vid, src))
    if bad:
        raise GraspValidationError("invalid grasp records: " + "; ".join(reasons), bad)
    if tag is None:
        srcs = {r[5] for r in rows}
        tag = "G_nvs" if srcs == {"nvs"} else ("G_real" if srcs <= {"real"} else "G_real_nvs")
    if not rows:
        return GraspSet.empty(tag)
    R, t, w, sc, vid, src = zip(*rows)
    return GraspSet(np.stack(R), np.stack(t), w, sc, vid, src, tag)


def import_grasps(path, view_id: Optional[int] = None, source: Optional[str] = None) -> GraspSet:
    """Load grasps from a JSON file ``{"grasps": [{rotation, translation, width,
    score, view_id, source}, ...]}``."""
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise GraspInputError(f"{path}: malformed JSON: {e}") from e
    tag = doc.get("tag") if isinstance(doc, dict) and view_id is None and source is None else None
    return parse_grasps(doc, view_id, source, tag if tag in TAGS else None)


# ---------------------------------------------------------------------------
# antipodal proposer


def antipodal_ok(p1, n1, p2, n2, mu: float, max_width: float) -> np.ndarray:
    """Both contact lines inside friction cones of half-angle atan(mu);
    ``n1``, ``n2`` are outward normals."""
    d = p2 - p1
    half = np.arctan(mu)
    return ((np.linalg.norm(d, axis=-1) <= max_width)
            & (np.linalg.norm(d, axis=-1) > 0)
            & (vector_angle(n1, d) >= np.pi - half)
            & (vector_angle(n2, -d) >= np.pi - half))


def approach_candidates(closing: np.ndarray, n: int = 8) -> np.ndarray:
    """``n`` unit directions perpendicular to ``closing``, most downward first."""
    ref = DOWN - (DOWN @ closing) * closing
    if np.linalg.norm(ref) < 1e-9:
        ref = np.array([1.0, 0.0, 0.0]) - closing[0] * closing
    e1 = ref / np.linalg.norm(ref)
    e2 = np.cross(closing, e1)
    ang = 2 * np.pi * np.arange(n) / n
    cand = np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2
    order = np.argsort(-(cand @ DOWN), kind="stable")
    return cand[order]


def gripper_collides(local: np.ndarray, width: float, gripper: GripperSpec) -> bool:
    """True when any gripper-frame point lies in the swept finger volumes or the palm."""
    if len(local) == 0:
        return False
    x, y, z = local[:, 0], local[:, 1], local[:, 2]
    t = gripper.finger_thickness
    L = gripper.finger_length
    zin = np.abs(z) <= t / 2
    ay = np.abs(y)
    fingers = zin & (x >= -L) & (x <= 0) & (ay >= width / 2) & (ay <= gripper.max_width / 2 + t)
    palm = zin & (x >= -L - t) & (x <= -L + gripper.palm_clearance) & (ay <= gripper.max_width / 2 + t)
    return bool(np.any(fingers | palm))


def grasp_frame(approach: np.ndarray, closing: np.ndarray) -> np.ndarray:
    z = np.cross(approach, closing)
    return np.column_stack([approach, closing, z])


def propose_antipodal(cloud: PointCloud, gripper: Optional[GripperSpec] = None, n_samples: int = 4096,
                      mu: float = 0.4, seed=0, view_id: int = 0, source: str = "real",
                      width_margin: float = 0.005, tries_per_sample: int = 4,
                      n_approach: int = 8) -> GraspSet:
    """Sample antipodal point pairs from an oriented cloud and turn the accepted
    pairs into collision-free grasps.

    For each of ``n_samples`` random first contacts ``p1``, candidate partners
    are found by snapping random points inside the inward friction cone (up to
    ``max_width`` deep) to the nearest cloud point. A pair is accepted when
    both contact lines lie within friction cones of half-angle atan(mu). The
    approach is the most downward of ``n_approach`` directions perpendicular
    to the closing line whose swept fingers and palm contain no cloud point.
    Score is cos(theta1) * cos(theta2).
    """
    gripper = gripper or GripperSpec()
    tag = "G_real" if source == "real" else "G_nvs"
    if cloud.normals is None:
        raise GraspInputError("antipodal proposal needs a cloud with normals")
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    if len(cloud) < 2:
        return GraspSet.empty(tag)
    rng = np.random.default_rng(seed)
    pts, nrm = cloud.points, cloud.normals
    tree = cKDTree(pts)
    half = np.arctan(mu)

    i1 = rng.integers(0, len(pts), size=n_samples)
    # random directions inside the inward cone of each p1
    k = tries_per_sample
    inward = -nrm[i1]
    helper = np.where(np.abs(inward[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    b1 = np.cross(inward, helper)
    b1 /= np.linalg.norm(b1, axis=1, keepdims=True)
    b2 = np.cross(inward, b1)
    cos_t = rng.uniform(np.cos(half), 1.0, size=(n_samples, k))
    phi = rng.uniform(0, 2 * np.pi, size=(n_samples, k))
    sin_t = np.sqrt(1 - cos_t ** 2)
    dirs = (cos_t[..., None] * inward[:, None] + (sin_t * np.cos(phi))[..., None] * b1[:, None]
            + (sin_t * np.sin(phi))[..., None] * b2[:, None])
    depth = rng.uniform(0, gripper.max_width, size=(n_samples, k))
    probes = pts[i1][:, None] + depth[..., None] * dirs
    _, i2 = tree.query(probes.reshape(-1, 3))
    i2 = i2.reshape(n_samples, k)
    ok = antipodal_ok(pts[i1][:, None], nrm[i1][:, None], pts[i2], nrm[i2], mu, gripper.max_width)

    # first accepted partner per sample, then drop repeated unordered pairs
    seen = set()
    pairs = []
    for s in range(n_samples):
        hits = np.flatnonzero(ok[s])
        if len(hits) == 0:
            continue
        a, b = int(i1[s]), int(i2[s, hits[0]])
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        pairs.append((a, b))
    if not pairs:
        return GraspSet.empty(tag)

    reach = np.sqrt((gripper.finger_length + gripper.finger_thickness) ** 2
                    + (gripper.max_width / 2 + gripper.finger_thickness) ** 2
                    + (gripper.finger_thickness / 2) ** 2)
    rots, trans, widths, scores, contacts, cnormals = [], [], [], [], [], []
    for a, b in pairs:
        p1, p2 = pts[a], pts[b]
        d = p2 - p1
        dist = float(np.linalg.norm(d))
        closing = d / dist
        origin = 0.5 * (p1 + p2)
        width = min(dist + 2 * width_margin, gripper.max_width)
        near = pts[tree.query_ball_point(origin, reach)]
        for approach in approach_candidates(closing, n_approach):
            R = grasp_frame(approach, closing)
            if not gripper_collides((near - origin) @ R, width, gripper):
                break
        else:
            continue
        th1 = vector_angle(d, -nrm[a])
        th2 = vector_angle(-d, -nrm[b])
        rots.append(R)
        trans.append(origin)
        widths.append(width)
        scores.append(float(np.clip(np.cos(th1) * np.cos(th2), 0.0, 1.0)))
        contacts.append([p1, p2])
        cnormals.append([nrm[a], nrm[b]])
    if not rots:
        return GraspSet.empty(tag)
    n = len(rots)
    return GraspSet(np.array(rots), np.array(trans), widths, scores, np.full(n, view_id),
                    np.full(n, source), tag, np.array(contacts), np.array(cnormals))
