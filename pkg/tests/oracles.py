"""Independent brute-force references used by the unit and acceptance tests.

Nothing here calls the package's distance transforms or vectorised score maps;
every value comes from an exhaustive search over pixels, from first principles.
"""

from __future__ import annotations

import math

import numpy as np

from leafgrasp import grasp as G
from leafgrasp.geometry import GradientUnavailable, depth_gradients


def _nearest(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """For each row of ``src`` the Euclidean distance to the closest row of ``dst`` (all pairs)."""
    diff = src[:, None, :] - dst[None, :, :]
    return np.sqrt((diff**2).sum(axis=2).min(axis=1))


def brute_distance_transform(mask: np.ndarray) -> np.ndarray:
    """Distance from every set pixel to the nearest unset pixel centre (unset pixels read 0)."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros(mask.shape)
    full, free = np.argwhere(mask), np.argwhere(~mask)
    out[mask] = _nearest(full, free)
    return out


def brute_sdf(occ: np.ndarray) -> np.ndarray:
    """Signed distance to the occupancy boundary, which sits half a pixel beyond the last pixel.

    Outside: distance to the nearest occupied centre minus 0.5.
    Inside: minus (distance to the nearest free centre minus 0.5).
    """
    occ = np.asarray(occ, dtype=bool)
    full, free = np.argwhere(occ), np.argwhere(~occ)
    out = np.zeros(occ.shape)
    out[occ] = -(_nearest(full, free) - 0.5)
    out[~occ] = _nearest(free, full) - 0.5
    return out


def random_mask(rng: np.random.Generator, max_side: int = 32) -> np.ndarray:
    """Random mask with both set and unset pixels, density varying per draw."""
    h, w = (int(x) for x in rng.integers(1, max_side + 1, size=2))
    while True:
        m = rng.random((h, w)) < rng.uniform(0.05, 0.95)
        if 0 < m.sum() < m.size:
            return m
        if h * w == 1:
            h, w = h + 1, w


def teacher_oracle(scene, leaf, cfg: G.GraspConfig = G.GraspConfig()):
    """Exhaustive argmax of S_final over every leaf pixel, ties to the smallest (u, v).

    Every feature is evaluated through the scalar reference functions; edge and
    stem distances come from explicit minimum searches over pixel lists.
    Returns ``(s_final, u, v)`` or ``None`` when no pixel is scorable.
    """
    k = scene.intrinsics
    W, H = scene.width, scene.height
    m = leaf.mask
    stem = G.stem_mask_for(scene, leaf.leaf_id, cfg)
    vs, us = np.nonzero(m)
    out = np.argwhere(~m)
    spx = np.argwhere(stem) if stem is not None else None
    best = None
    for u, v in zip(us.tolist(), vs.tolist()):
        z = float(scene.depth.values[v, u])
        if not z > 0:
            continue
        try:
            gx, gy, _ = depth_gradients(scene.depth, (u, v), m)
        except GradientUnavailable:
            continue
        f = G.flatness_from_gradient(gx, gy, cfg.alpha_flatness)
        x, y = (u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy
        a = G.approach_score((x, y, z))
        # pixels beyond the image border count as outside the leaf
        dd = ((out[:, 0] - v) ** 2 + (out[:, 1] - u) ** 2).min() if len(out) else np.inf
        dd = min(dd, (u + 1) ** 2, (W - u) ** 2, (v + 1) ** 2, (H - v) ** 2)
        d_edge = max(math.sqrt(dd) - 0.5, 0.0)
        e = G.edge_score(d_edge, G.safe_distance_px(cfg.d_safe_mm, k.fx, z))
        acc = G.accessibility_score((u, v), (x, y, z), W, H, cfg.acc_center_weight)
        s = G.combine(f, a, e, acc, cfg.weights)
        pen = 0.0
        if spx is not None:
            pen = G.stem_penalty(math.sqrt(((spx[:, 0] - v) ** 2 + (spx[:, 1] - u) ** 2).min()), cfg.alpha_stem)
        key = (-G.final_score(s, pen), u, v)
        if best is None or key < best:
            best = key
    return None if best is None else (-best[0], best[1], best[2])


class StubModel:
    """Callable returning fixed probabilities, standing in for the CNN."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.calls = 0

    def __call__(self, patches):
        self.calls += 1
        return self.probs[: len(patches)]
