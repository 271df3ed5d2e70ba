"""Geometric grasp-point scoring on a selected leaf (the teacher).

Scalar feature functions are the reference definitions; :class:`GraspContext`
evaluates the same formulas, in the same operation order, over every pixel of
a crop around the leaf so the two routes agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distance import edt_sq
from .geometry import LeafModel, depth_gradients, gradient_maps, mask_bbox
from .leafselect import _renormalized, half_diagonal, image_center
from .scene import CameraIntrinsics, Scene

PATCH = 32
HALF = PATCH // 2
CLUTTER_RANGE = 16.0  # px; clutter-context channel saturates beyond this


class NoCandidateError(ValueError):
    pass


@dataclass(frozen=True)
class GraspWeights:
    flatness: float = 0.25
    approach: float = 0.40
    edge: float = 0.20
    accessibility: float = 0.15

    def drop(self, name: str) -> "GraspWeights":
        return GraspWeights(**_renormalized(self.__dict__, name))

    def only(self, name: str) -> "GraspWeights":
        if name not in self.__dict__:
            raise KeyError(f"unknown feature {name!r}")
        return GraspWeights(**{k: (1.0 if k == name else 0.0) for k in self.__dict__})


@dataclass(frozen=True)
class GraspConfig:
    weights: GraspWeights = field(default_factory=GraspWeights)
    alpha_flatness: float = 5.0  # per (metre / pixel) of depth gradient
    d_safe_mm: float = 5.0
    alpha_stem: float = 0.1  # per pixel
    acc_center_weight: float = 0.7
    stride: int = 2
    n_candidates: int = 20
    min_separation: float = 10.0
    stem_heuristic: bool = False
    stem_fraction: float = 0.15


@dataclass(frozen=True)
class GraspCandidate:
    u: int
    v: int
    point: tuple
    flatness: float
    approach: float
    edge: float
    accessibility: float
    s_grasp: float
    stem_penalty: float
    s_final: float

    @property
    def pixel(self) -> tuple[int, int]:
        return (self.u, self.v)


# ---------------------------------------------------------------------------
# scalar reference definitions


def flatness_from_gradient(gx: float, gy: float, alpha: float = 5.0) -> float:
    return math.exp(-alpha * math.sqrt(gx * gx + gy * gy))


def flatness_score(depth, at: tuple[int, int], mask=None, alpha: float = 5.0) -> float:
    gx, gy, _ = depth_gradients(depth, at, mask)
    return flatness_from_gradient(gx, gy, alpha)


def approach_score(point) -> float:
    """|v . z| / |v| for the camera-to-point vector ``v``."""
    x, y, z = (float(c) for c in point)
    n = math.sqrt(x * x + y * y + z * z)
    if n == 0:
        raise ValueError("zero-length approach vector")
    return abs(z) / n


def safe_distance_px(d_safe_mm: float, fx: float, depth: float) -> float:
    return (d_safe_mm / 1000.0) * fx / depth


def edge_score(d_edge_px: float, d_safe_px: float) -> float:
    return min(1.0, d_edge_px / d_safe_px)


def accessibility_score(at: tuple[float, float], point, width: int, height: int, center_weight: float = 0.7) -> float:
    """``center_weight * (1 - d(p, c) / d_max) + (1 - center_weight) * cos(theta)``.

    ``theta`` is the angle between the camera-to-point ray and the optical axis.
    """
    cx, cy = image_center(width, height)
    d = math.hypot(at[0] - cx, at[1] - cy)
    cos_theta = approach_score(point)
    return center_weight * (1.0 - d / half_diagonal(width, height)) + (1.0 - center_weight) * cos_theta


def stem_penalty(d_stem_px: float, alpha: float = 0.1) -> float:
    return math.exp(-alpha * d_stem_px)


def combine(f: float, a: float, e: float, acc: float, w: GraspWeights = GraspWeights()) -> float:
    return w.flatness * f + w.approach * a + w.edge * e + w.accessibility * acc


def final_score(s_grasp: float, penalty: float) -> float:
    return s_grasp * (1.0 - penalty)


# ---------------------------------------------------------------------------
# stems


def heuristic_stem(mask: np.ndarray, fraction: float = 0.15) -> np.ndarray:
    """Mask pixels within ``fraction`` of the major-axis length of the blunter axis end.

    A stand-in for a stem detector when no annotation exists; the blunter end
    (more mask pixels near it) is taken as the base.
    """
    vs, us = np.nonzero(mask)
    pts = np.stack([us, vs], axis=1).astype(np.float64)
    mean = pts.mean(axis=0)
    cov = np.cov((pts - mean).T) if len(pts) > 1 else np.eye(2)
    axis = np.linalg.eigh(cov)[1][:, -1]
    proj = (pts - mean) @ axis
    lo, hi = proj.min(), proj.max()
    band = fraction * (hi - lo)
    near_lo = proj <= lo + band
    near_hi = proj >= hi - band
    pick = near_lo if near_lo.sum() >= near_hi.sum() else near_hi
    out = np.zeros_like(mask, dtype=bool)
    out[vs[pick], us[pick]] = True
    return out


def stem_mask_for(scene: Scene, leaf_id: int, cfg: GraspConfig):
    if leaf_id in scene.stems and scene.stems[leaf_id].any():
        return scene.stems[leaf_id]
    if cfg.stem_heuristic:
        return heuristic_stem(scene.mask(leaf_id), cfg.stem_fraction)
    return None


# ---------------------------------------------------------------------------
# vectorised maps


class GraspContext:
    """All per-pixel feature maps for one leaf on a padded crop.

    The crop covers the leaf bounding box plus :data:`HALF` pixels on every side
    (possibly beyond the image) so any 32x32 patch centred on a leaf pixel fits.
    ``origin`` is the image coordinate of element ``[0, 0]``.
    """

    def __init__(self, scene: Scene, leaf: LeafModel, cfg: GraspConfig = GraspConfig()):
        self.scene = scene
        self.leaf = leaf
        self.cfg = cfg
        k = scene.intrinsics
        W, H = scene.width, scene.height
        lu0, lv0, lu1, lv1 = leaf.bbox
        u0, v0, u1, v1 = lu0 - HALF, lv0 - HALF, lu1 + HALF, lv1 + HALF
        self.origin = (u0, v0)
        uu = np.arange(u0, u1)
        vv = np.arange(v0, v1)
        inside = ((vv >= 0) & (vv < H))[:, None] & ((uu >= 0) & (uu < W))[None, :]
        cu_idx, cv_idx = np.clip(uu, 0, W - 1), np.clip(vv, 0, H - 1)
        depth = scene.depth.values[np.ix_(cv_idx, cu_idx)]
        self.depth = depth  # edge-replicated outside the image
        self.inside = inside
        self.leaf_mask = leaf.mask[np.ix_(cv_idx, cu_idx)] & inside
        valid = np.isfinite(depth) & (depth > 0) & inside
        self.valid = valid
        usable = self.leaf_mask & valid
        self.usable = usable
        U, V = np.meshgrid(uu.astype(np.float64), vv.astype(np.float64))
        self.U, self.V = U, V

        gx, gy = gradient_maps(depth, usable)
        self.gx, self.gy = gx, gy
        with np.errstate(invalid="ignore"):
            F = np.exp(-cfg.alpha_flatness * np.sqrt(gx * gx + gy * gy))
        Z = np.where(valid, depth.astype(np.float64), np.nan)
        X = (U - k.cx) * Z / k.fx
        Y = (V - k.cy) * Z / k.fy
        self.X, self.Y, self.Z = X, Y, Z
        A = np.abs(Z) / np.sqrt(X * X + Y * Y + Z * Z)

        # distance to the leaf boundary; the boundary sits half a pixel outside
        # the last leaf pixel, and everything beyond the image counts as outside
        d_edge = np.sqrt(edt_sq(~self.leaf_mask)) - 0.5
        d_edge = np.maximum(d_edge, 0.0)
        self.d_edge = d_edge
        d_safe_px = (cfg.d_safe_mm / 1000.0) * k.fx / Z
        E = np.minimum(1.0, d_edge / d_safe_px)

        cx, cy = image_center(W, H)
        d_center = np.hypot(U - cx, V - cy)
        cw = cfg.acc_center_weight
        Acc = cw * (1.0 - d_center / half_diagonal(W, H)) + (1.0 - cw) * A

        stem = stem_mask_for(scene, leaf.leaf_id, cfg)
        self.has_stem = stem is not None
        if stem is None:
            self.d_stem = np.full(U.shape, np.inf)
            P = np.zeros(U.shape)
        else:
            self.d_stem = self._stem_distance(stem)
            P = np.exp(-cfg.alpha_stem * self.d_stem)

        w = cfg.weights
        S = w.flatness * F + w.approach * A + w.edge * E + w.accessibility * Acc
        S_final = S * (1.0 - P)
        cand = usable & np.isfinite(S_final)
        self.F, self.A, self.E, self.Acc, self.P = F, A, E, Acc, P
        self.S_grasp, self.S_final = S, S_final
        self.candidates = cand
        self._clutter = None
        self._stack = None

    def _stem_distance(self, stem: np.ndarray) -> np.ndarray:
        u0, v0 = self.origin
        hh, ww = self.U.shape
        su0, sv0, su1, sv1 = mask_bbox(stem)
        # region covering the crop and the whole stem so the nearest stem pixel is never cut off
        ru0, rv0 = min(u0, su0), min(v0, sv0)
        ru1, rv1 = max(u0 + ww, su1), max(v0 + hh, sv1)
        feat = np.zeros((rv1 - rv0, ru1 - ru0), dtype=bool)
        feat[sv0 - rv0 : sv1 - rv0, su0 - ru0 : su1 - ru0] = stem[sv0:sv1, su0:su1]
        d = np.sqrt(edt_sq(feat))
        return d[v0 - rv0 : v0 - rv0 + hh, u0 - ru0 : u0 - ru0 + ww]

    @property
    def clutter_context(self) -> np.ndarray:
        """Signed distance to other leaves, scaled to [-1, 1] over 16 px."""
        if self._clutter is None:
            u0, v0 = self.origin
            hh, ww = self.U.shape
            m = int(CLUTTER_RANGE) + 1
            W, H = self.scene.width, self.scene.height
            occ = np.zeros((hh + 2 * m, ww + 2 * m), dtype=bool)
            iu0, iv0 = max(0, u0 - m), max(0, v0 - m)
            iu1, iv1 = min(W, u0 + ww + m), min(H, v0 + hh + m)
            sub = occ[iv0 - (v0 - m) : iv1 - (v0 - m), iu0 - (u0 - m) : iu1 - (u0 - m)]
            for inst in self.scene.instances:
                if inst.leaf_id != self.leaf.leaf_id:
                    sub |= inst.mask[iv0:iv1, iu0:iu1]
            if occ.any():
                sdf = np.where(occ, -(np.sqrt(edt_sq(~occ)) - 0.5), np.sqrt(edt_sq(occ)) - 0.5)
            else:
                sdf = np.full(occ.shape, np.inf)
            self._clutter = np.clip(sdf[m:-m, m:-m] / CLUTTER_RANGE, -1.0, 1.0)
        return self._clutter

    @property
    def score_stack(self) -> np.ndarray:
        """(7, h, w) float32: F, A, E, Acc, stem penalty, S_grasp, clutter context.

        The six per-pixel grasp maps are zero wherever no score exists; the
        clutter context is defined everywhere.
        """
        if self._stack is None:
            cand = self.candidates
            maps = [np.where(cand, m, 0.0) for m in (self.F, self.A, self.E, self.Acc, self.P, self.S_grasp)]
            maps.append(self.clutter_context)
            self._stack = np.stack(maps).astype(np.float32)
        return self._stack

    def local(self, u: int, v: int) -> tuple[int, int]:
        return v - self.origin[1], u - self.origin[0]

    def candidate(self, u: int, v: int) -> GraspCandidate:
        r, c = self.local(u, v)
        if not self.candidates[r, c]:
            raise NoCandidateError(f"({u}, {v}) is not a scorable pixel of leaf {self.leaf.leaf_id}")
        return GraspCandidate(
            u, v,
            (float(self.X[r, c]), float(self.Y[r, c]), float(self.Z[r, c])),
            float(self.F[r, c]), float(self.A[r, c]), float(self.E[r, c]), float(self.Acc[r, c]),
            float(self.S_grasp[r, c]), float(self.P[r, c]), float(self.S_final[r, c]),
        )

    def ranked_pixels(self, mask: np.ndarray | None = None) -> np.ndarray:
        """(u, v) of scorable pixels sorted by S_final descending, then u, then v."""
        sel = self.candidates if mask is None else (self.candidates & mask)
        rr, cc = np.nonzero(sel)
        if len(rr) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        u = cc + self.origin[0]
        v = rr + self.origin[1]
        order = np.lexsort((v, u, -self.S_final[rr, cc]))
        return np.stack([u[order], v[order]], axis=1)

    def best_pixel(self) -> tuple[int, int]:
        """Full-resolution argmax of S_final; ties go to the smallest u, then v."""
        if not self.candidates.any():
            raise NoCandidateError(f"leaf {self.leaf.leaf_id} has no scorable pixel")
        s = np.where(self.candidates, self.S_final, -np.inf)
        rr, cc = np.nonzero(s == s.max())
        i = int(np.lexsort((rr, cc))[0])
        return int(cc[i]) + self.origin[0], int(rr[i]) + self.origin[1]

    def best(self) -> GraspCandidate:
        return self.candidate(*self.best_pixel())

    def generate_candidates(self, k: int | None = None, min_sep: float | None = None) -> list[GraspCandidate]:
        """Top-k pixels of a stride grid (plus the full-resolution best) kept >= min_sep apart."""
        k = self.cfg.n_candidates if k is None else k
        min_sep = self.cfg.min_separation if min_sep is None else min_sep
        s = self.cfg.stride
        grid = ((self.U.astype(np.int64) % s) == 0) & ((self.V.astype(np.int64) % s) == 0)
        r, c = self.local(*self.best_pixel())
        grid[r, c] = True
        pool = self.ranked_pixels(grid)
        # greedy suppression in rank order: take the best survivor, drop its neighbours
        alive = np.ones(len(pool), dtype=bool)
        pu, pv = pool[:, 0], pool[:, 1]
        kept: list[tuple[int, int]] = []
        i = 0
        min_sep2 = min_sep * min_sep
        while len(kept) < k:
            rest = np.flatnonzero(alive[i:])
            if len(rest) == 0:
                break
            i += int(rest[0])
            u, v = int(pu[i]), int(pv[i])
            kept.append((u, v))
            alive &= (pu - u) ** 2 + (pv - v) ** 2 >= min_sep2
        return [self.candidate(u, v) for u, v in kept]


def generate_candidates(leaf: LeafModel, k: int = 20, min_sep: float = 10.0, cfg: GraspConfig = GraspConfig()):
    return GraspContext(leaf.scene, leaf, cfg).generate_candidates(k, min_sep)


def teacher_best(leaf: LeafModel, cfg: GraspConfig = GraspConfig()) -> GraspCandidate:
    return GraspContext(leaf.scene, leaf, cfg).best()


def camera_ray_angle(u: float, v: float, k: CameraIntrinsics) -> float:
    return math.atan(math.hypot((u - k.cx) / k.fx, (v - k.cy) / k.fy))
