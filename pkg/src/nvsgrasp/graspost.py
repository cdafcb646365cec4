"""Post-processing of aggregated grasp sets: keep as is, pose-NMS, or
clustering with top-grasp filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .geometry import pairwise_rotation_distance
from .graspgen import GraspSet, concatenate

BRANCHES = ("asis", "nms", "cluster")
TAG_ORDER = ("G_real", "G_nvs", "G_real_nvs")


@dataclass(frozen=True)
class NmsParams:
    translation_threshold: float = 0.03
    rotation_threshold: float = math.radians(15.0)
    symmetric: bool = False  # fold in the 180 deg jaw flip

    def __post_init__(self):
        if self.translation_threshold <= 0 or self.rotation_threshold <= 0:
            raise ValueError("NMS thresholds must be positive")


@dataclass(frozen=True)
class ClusterParams:
    keep_fraction: float = 0.5
    translation_threshold: float = 0.05
    rotation_threshold: float = math.radians(10.0)
    symmetric: bool = False

    def __post_init__(self):
        if not 0 < self.keep_fraction <= 1:
            raise ValueError("keep_fraction must lie in (0, 1]")
        if self.translation_threshold <= 0 or self.rotation_threshold <= 0:
            raise ValueError("cluster thresholds must be positive")


def aggregate(sets: Sequence[GraspSet]) -> GraspSet:
    """Concatenate grasp sets in input order, keeping view ids and sources."""
    if not sets:
        raise ValueError("aggregate needs at least one grasp set")
    return concatenate(sets, "G_real_nvs")


def score_order(gs: GraspSet) -> np.ndarray:
    """Indices by descending score; ties keep the lower input index first."""
    return np.argsort(-gs.scores, kind="stable")


def _neighbors(gs: GraspSet, i: int, idx: np.ndarray, t_thr: float, r_thr: float, symmetric: bool) -> np.ndarray:
    """Mask over ``idx``: within both thresholds of grasp ``i``."""
    dt = np.linalg.norm(gs.translations[idx] - gs.translations[i], axis=1)
    dr = pairwise_rotation_distance(gs.rotations[i], gs.rotations[idx], symmetric)[0]
    return (dt < t_thr) & (dr < r_thr)


def pose_nms(gs: GraspSet, params: NmsParams = NmsParams()) -> GraspSet:
    """Greedy suppression in score order: keep the best remaining grasp and
    drop every grasp closer than both thresholds to it."""
    order = score_order(gs)
    alive = np.ones(len(gs), dtype=bool)
    keep: List[int] = []
    for pos, i in enumerate(order):
        if not alive[i]:
            continue
        keep.append(int(i))
        rest = order[pos + 1:]
        rest = rest[alive[rest]]
        if len(rest):
            close = _neighbors(gs, i, rest, params.translation_threshold, params.rotation_threshold,
                               params.symmetric)
            alive[rest[close]] = False
    return gs.take(keep)


def cluster_assign(gs: GraspSet, idx: np.ndarray, params: ClusterParams) -> List[List[int]]:
    """Founder-representative clustering of ``idx`` (already in score order).

    Each grasp joins the first existing cluster whose founder is within both
    thresholds, otherwise it founds a new cluster.
    """
    clusters: List[List[int]] = []
    founders: List[int] = []
    for i in idx:
        joined = False
        if founders:
            close = _neighbors(gs, int(i), np.asarray(founders), params.translation_threshold,
                               params.rotation_threshold, params.symmetric)
            hit = np.flatnonzero(close)
            if len(hit):
                clusters[hit[0]].append(int(i))
                joined = True
        if not joined:
            founders.append(int(i))
            clusters.append([int(i)])
    return clusters


def cluster_filter(gs: GraspSet, params: ClusterParams = ClusterParams()) -> GraspSet:
    """Keep the top fraction by score, cluster, keep the best grasp per view in
    each cluster, then the single best grasp per cluster."""
    n = len(gs)
    if n == 0:
        return gs.take([])
    order = score_order(gs)
    top = order[:math.ceil(params.keep_fraction * n)]
    clusters = cluster_assign(gs, top, params)
    survivors = []
    for members in clusters:
        best_per_view: Dict[int, int] = {}
        for i in members:  # members are in score order
            best_per_view.setdefault(int(gs.view_ids[i]), i)
        per_view = list(best_per_view.values())
        best = min(per_view, key=lambda i: (-gs.scores[i], i))
        survivors.append(best)
    survivors.sort(key=lambda i: (-gs.scores[i], i))
    return gs.take(survivors)


def run_branches(g_real: GraspSet, g_nvs: GraspSet, nms: NmsParams = NmsParams(),
                 cluster: ClusterParams = ClusterParams()) -> Dict[Tuple[str, str], GraspSet]:
    """All three branches applied independently to G_real, G_nvs and G_real_nvs."""
    if g_real.tag != "G_real" or g_nvs.tag != "G_nvs":
        raise ValueError("expected G_real and G_nvs tagged inputs")
    raw = {"G_real": g_real, "G_nvs": g_nvs, "G_real_nvs": aggregate([g_real, g_nvs])}
    out: Dict[Tuple[str, str], GraspSet] = {}
    for tag in TAG_ORDER:
        out[("asis", tag)] = raw[tag]
    for tag in TAG_ORDER:
        out[("nms", tag)] = pose_nms(raw[tag], nms)
    for tag in TAG_ORDER:
        out[("cluster", tag)] = cluster_filter(raw[tag], cluster)
    return out
