"""Leaf-level clutter / distance / visibility scoring and target selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .distance import DistanceField, signed_distance_field
from .geometry import DegenerateLeafError, LeafModel
from .scene import Scene

log = logging.getLogger(__name__)


class NoViableLeafError(ValueError):
    pass


def _renormalized(weights: dict, drop: str) -> dict:
    if drop not in weights:
        raise KeyError(f"unknown feature {drop!r}; expected one of {sorted(weights)}")
    kept = {k: (0.0 if k == drop else v) for k, v in weights.items()}
    total = sum(kept.values())
    if total <= 0:
        raise ValueError("cannot drop the only weighted feature")
    return {k: v / total for k, v in kept.items()}


@dataclass(frozen=True)
class LeafWeights:
    clutter: float = 0.35
    distance: float = 0.35
    visibility: float = 0.30

    def drop(self, name: str) -> "LeafWeights":
        return LeafWeights(**_renormalized(self.__dict__, name))


@dataclass(frozen=True)
class LeafSelectConfig:
    weights: LeafWeights = field(default_factory=LeafWeights)
    window: int = 201  # SDF extrema search window, px
    margin: int = 100  # extra context around the window when building the SDF
    distance_scale: float = 0.3  # metres
    clutter_mode: str = "location"  # or "value"


@dataclass(frozen=True)
class LeafScores:
    leaf_id: int
    clutter: float
    distance: float
    visibility: float
    total: float
    d_min: float
    d_max: float
    flags: tuple = ()


class ClutterTerms(NamedTuple):
    score: float
    d_min: float
    d_max: float
    flag: str


def window_bounds(center_uv, window: int, width: int, height: int):
    cu, cv = int(round(center_uv[0])), int(round(center_uv[1]))
    r = window // 2
    return max(0, cu - r), max(0, cv - r), min(width, cu + r + 1), min(height, cv + r + 1)


def clutter_sdf(scene: Scene, leaf: LeafModel, cfg: LeafSelectConfig = LeafSelectConfig()) -> DistanceField:
    """SDF of every *other* leaf, evaluated over the search window.

    Occupancy is gathered from the window plus ``margin`` pixels of context on
    every side (clipped to the image); only the window part of the field is
    returned.
    """
    u0, v0, u1, v1 = window_bounds(leaf.centroid_uv, cfg.window + 2 * cfg.margin, scene.width, scene.height)
    occ = np.zeros((v1 - v0, u1 - u0), dtype=bool)
    for inst in scene.instances:
        if inst.leaf_id == leaf.leaf_id:
            continue
        bu0, bv0, bu1, bv1 = inst.bbox
        iu0, iv0, iu1, iv1 = max(u0, bu0), max(v0, bv0), min(u1, bu1), min(v1, bv1)
        if iu0 < iu1 and iv0 < iv1:
            occ[iv0 - v0 : iv1 - v0, iu0 - u0 : iu1 - u0] |= inst.mask[iv0:iv1, iu0:iu1]
    wu0, wv0, wu1, wv1 = window_bounds(leaf.centroid_uv, cfg.window, scene.width, scene.height)
    return signed_distance_field(occ, origin=(u0, v0), window=(wu0 - u0, wv0 - v0, wu1 - u0, wv1 - v0))


def clutter_terms(leaf: LeafModel, sdf: DistanceField, window: int = 201, mode: str = "location") -> ClutterTerms:
    """d_min / (d_min + d_max) from the SDF extrema inside the search window.

    In ``location`` mode the two distances run from the leaf centroid to the
    pixels holding the SDF minimum and maximum (first in row-major order on
    ties); in ``value`` mode they are the magnitudes of those extrema.
    """
    cu, cv = leaf.centroid_uv
    ou, ov = sdf.origin
    u0, v0, u1, v1 = window_bounds((cu, cv), window, ou + sdf.width, ov + sdf.height)
    u0, v0 = max(u0, ou), max(v0, ov)
    patch = sdf.values[v0 - ov : v1 - ov, u0 - ou : u1 - ou]
    if sdf.degenerate:
        # no other leaf nearby: the minimum is infinitely far away
        if patch.size and patch.flat[0] > 0:
            return ClutterTerms(1.0, math.inf, 0.0, "isolated")
        return ClutterTerms(0.0, 0.0, math.inf, "buried")
    imin, imax = int(np.argmin(patch)), int(np.argmax(patch))
    if mode == "value":
        d_min, d_max = abs(float(patch.flat[imin])), abs(float(patch.flat[imax]))
    elif mode == "location":
        pw = patch.shape[1]
        d_min = math.hypot(u0 + imin % pw - cu, v0 + imin // pw - cv)
        d_max = math.hypot(u0 + imax % pw - cu, v0 + imax // pw - cv)
    else:
        raise ValueError(f"unknown clutter mode {mode!r}")
    if d_min + d_max == 0:
        return ClutterTerms(0.5, 0.0, 0.0, "degenerate")
    return ClutterTerms(d_min / (d_min + d_max), d_min, d_max, "")


def clutter_score(leaf: LeafModel, sdf: DistanceField, window: int = 201, mode: str = "location") -> float:
    return clutter_terms(leaf, sdf, window, mode).score


def distance_score(leaf: LeafModel, scale: float = 0.3) -> float:
    if leaf.n_valid == 0:
        raise DegenerateLeafError(f"leaf {leaf.leaf_id} has no 3D points")
    return math.exp(-leaf.d_mean / scale)


def touches_border(mask: np.ndarray) -> bool:
    return bool(mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any())


def image_center(width: int, height: int) -> tuple[float, float]:
    return (width - 1) / 2.0, (height - 1) / 2.0


def half_diagonal(width: int, height: int) -> float:
    return math.hypot((width - 1) / 2.0, (height - 1) / 2.0)


def visibility_score(leaf: LeafModel, width: int, height: int) -> float:
    if touches_border(leaf.mask):
        return 0.0
    cx, cy = image_center(width, height)
    d_center = math.hypot(leaf.centroid_uv[0] - cx, leaf.centroid_uv[1] - cy)
    return 1.0 - d_center / half_diagonal(width, height)


def score_leaf(scene: Scene, leaf: LeafModel, cfg: LeafSelectConfig = LeafSelectConfig()) -> LeafScores:
    ct = clutter_terms(leaf, clutter_sdf(scene, leaf, cfg), cfg.window, cfg.clutter_mode)
    sd = distance_score(leaf, cfg.distance_scale)
    sv = visibility_score(leaf, scene.width, scene.height)
    w = cfg.weights
    total = w.clutter * ct.score + w.distance * sd + w.visibility * sv
    for name, val in (("clutter", ct.score), ("distance", sd), ("visibility", sv)):
        assert 0.0 <= val <= 1.0, f"leaf {leaf.leaf_id}: {name} score {val} outside [0, 1]"
    return LeafScores(
        leaf.leaf_id, ct.score, sd, sv, total, ct.d_min, ct.d_max, (ct.flag,) if ct.flag else ()
    )


def leaf_models(scene: Scene) -> tuple[dict, list]:
    """Models for every non-degenerate leaf, plus the ids that were skipped."""
    models, skipped = {}, []
    for lid in scene.leaf_ids:
        try:
            models[lid] = LeafModel(scene, lid)
        except DegenerateLeafError:
            log.warning("%s: leaf %d has no valid depth; excluded from selection", scene.scene_id, lid)
            skipped.append(lid)
    return models, skipped


def rank_leaves(scores: list) -> list:
    return sorted(scores, key=lambda s: (-s.total, s.leaf_id))


def select_leaf(scene: Scene, cfg: LeafSelectConfig = LeafSelectConfig(), models: dict | None = None):
    """Pick the leaf with the highest weighted score; ties go to the lowest id.

    Returns ``(leaf_id, scores)`` with scores for every viable leaf in id order.
    """
    if models is None:
        models, _ = leaf_models(scene)
    if not models:
        raise NoViableLeafError(f"{scene.scene_id}: every leaf is degenerate")
    scores = [score_leaf(scene, models[lid], cfg) for lid in sorted(models)]
    return rank_leaves(scores)[0].leaf_id, scores


def with_weights(cfg: LeafSelectConfig, weights: LeafWeights) -> LeafSelectConfig:
    return replace(cfg, weights=weights)
