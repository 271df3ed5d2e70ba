"""Hand-derived input/output tables for every closed-form score.

Each case is ``(law, thunk, expected, tol)``; ``expected`` is written out in
plain arithmetic from the defining formula, never via package code.  Closed
forms use 1e-9, anything involving exp / trig / sqrt uses 1e-6.
"""

from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np

from leafgrasp import fusion as Fu
from leafgrasp import grasp as G
from leafgrasp import leafselect as LS
from leafgrasp.distance import DistanceField
from leafgrasp.nn import layers as L

EXACT, TRANS = 1e-9, 1e-6


def _clutter(centroid, at_min, at_max, mode="location", vmin=-1.0, vmax=1.0):
    values = np.zeros((5, 5))
    values[at_min[1], at_min[0]] = vmin
    values[at_max[1], at_max[0]] = vmax
    leaf = SimpleNamespace(centroid_uv=centroid)
    return lambda: LS.clutter_score(leaf, DistanceField(values, signed=True), 201, mode)


def _leaf_at(centroid, touching=False):
    mask = np.zeros((101, 101), bool)
    mask[40:60, 40:60] = True
    if touching:
        mask[0, 50] = True
    return SimpleNamespace(mask=mask, centroid_uv=centroid)


def _dist(d_mean):
    return lambda: LS.distance_score(SimpleNamespace(n_valid=10, d_mean=d_mean, leaf_id=0))


HD = math.hypot(50, 50)  # half-diagonal of a 101 x 101 image, centre (50, 50)


def _bce(logits, labels):
    return lambda: L.weighted_bce(np.array(logits, float), np.array(labels, float), 2.0)[0]


CASES = [
    # clutter: d_min / (d_min + d_max), distances from the centroid to the extremum locations
    ("clutter", _clutter((0, 0), (3, 4), (0, 2)), 5 / 7, TRANS),
    ("clutter", _clutter((2, 2), (2, 2), (4, 2)), 0.0, TRANS),
    ("clutter", _clutter((1, 1), (4, 1), (1, 4)), 0.5, TRANS),
    ("clutter", _clutter((0, 0), (1, 1), (4, 4)), 0.2, TRANS),
    ("clutter", _clutter((4, 0), (0, 3), (4, 4)), 5 / 9, TRANS),
    ("clutter", _clutter((0, 0), (1, 1), (4, 4), "value", -2.0, 3.0), 0.4, TRANS),
    # distance: exp(-d_mean / 0.3)
    ("distance", _dist(0.0), 1.0, TRANS),
    ("distance", _dist(0.3), 0.36787944117144233, TRANS),
    ("distance", _dist(0.6), 0.1353352832366127, TRANS),
    ("distance", _dist(0.15), 0.6065306597126334, TRANS),
    ("distance", _dist(0.9), 0.049787068367863944, TRANS),
    # visibility: 0 on the border, else 1 - d(centroid, centre) / half-diagonal
    ("visibility", lambda: LS.visibility_score(_leaf_at((50, 50)), 101, 101), 1.0, TRANS),
    ("visibility", lambda: LS.visibility_score(_leaf_at((75, 75)), 101, 101), 0.5, TRANS),
    ("visibility", lambda: LS.visibility_score(_leaf_at((80, 50)), 101, 101), 1 - 30 / HD, TRANS),
    ("visibility", lambda: LS.visibility_score(_leaf_at((100, 100)), 101, 101), 0.0, TRANS),
    ("visibility", lambda: LS.visibility_score(_leaf_at((50, 50), touching=True), 101, 101), 0.0, EXACT),
    # flatness: exp(-5 |grad|)
    ("flatness", lambda: G.flatness_from_gradient(0.0, 0.0), 1.0, TRANS),
    ("flatness", lambda: G.flatness_from_gradient(0.2, 0.0), math.e**-1, TRANS),
    ("flatness", lambda: G.flatness_from_gradient(0.12, 0.16), math.e**-1, TRANS),
    ("flatness", lambda: G.flatness_from_gradient(0.0, 0.1), math.e**-0.5, TRANS),
    ("flatness", lambda: G.flatness_from_gradient(0.3, 0.4), math.e**-2.5, TRANS),
    # approach: |v . z| / |v|
    ("approach", lambda: G.approach_score((0, 0, 1)), 1.0, TRANS),
    ("approach", lambda: G.approach_score((1, 0, 1)), 1 / math.sqrt(2), TRANS),
    ("approach", lambda: G.approach_score((0, 3, 4)), 0.8, TRANS),
    ("approach", lambda: G.approach_score((2, 3, 6)), 6 / 7, TRANS),
    ("approach", lambda: G.approach_score((1, 2, -2)), 2 / 3, TRANS),
    # edge: min(1, d_edge / d_safe); d_safe = 5 mm at fx 1000, Z 0.5 m is 10 px
    ("edge", lambda: G.safe_distance_px(5.0, 1000.0, 0.5), 10.0, EXACT),
    ("edge", lambda: G.edge_score(10.0, 10.0), 1.0, EXACT),
    ("edge", lambda: G.edge_score(5.0, 10.0), 0.5, EXACT),
    ("edge", lambda: G.edge_score(20.0, 10.0), 1.0, EXACT),
    ("edge", lambda: G.edge_score(0.0, 10.0), 0.0, EXACT),
    ("edge", lambda: G.edge_score(2.5, 10.0), 0.25, EXACT),
    # accessibility: 0.7 (1 - d / half-diagonal) + 0.3 cos(theta)
    ("accessibility", lambda: G.accessibility_score((50, 50), (0, 0, 1), 101, 101), 1.0, TRANS),
    ("accessibility", lambda: G.accessibility_score((75, 75), (0, 0, 1), 101, 101), 0.65, TRANS),
    ("accessibility", lambda: G.accessibility_score((50, 50), (1, 0, 1), 101, 101), 0.7 + 0.3 / math.sqrt(2), TRANS),
    ("accessibility", lambda: G.accessibility_score((0, 0), (0, 3, 4), 101, 101), 0.3 * 0.8, TRANS),
    ("accessibility", lambda: G.accessibility_score((80, 50), (2, 3, 6), 101, 101),
     0.7 * (1 - 30 / HD) + 0.3 * 6 / 7, TRANS),
    # weighted grasp score: 0.25 F + 0.40 A + 0.20 E + 0.15 Acc
    ("grasp score", lambda: G.combine(1, 1, 1, 1), 1.0, EXACT),
    ("grasp score", lambda: G.combine(0, 0, 0, 0), 0.0, EXACT),
    ("grasp score", lambda: G.combine(1, 0, 0, 0), 0.25, EXACT),
    ("grasp score", lambda: G.combine(0.5, 0.5, 0.5, 0.5), 0.5, EXACT),
    ("grasp score", lambda: G.combine(0.2, 0.4, 0.6, 0.8), 0.05 + 0.16 + 0.12 + 0.12, EXACT),
    # stem penalty exp(-0.1 d) and final score S (1 - P)
    ("stem penalty", lambda: G.stem_penalty(0.0), 1.0, TRANS),
    ("stem penalty", lambda: G.stem_penalty(10.0), math.e**-1, TRANS),
    ("stem penalty", lambda: G.stem_penalty(5.0), math.e**-0.5, TRANS),
    ("stem penalty", lambda: G.stem_penalty(20.0), math.e**-2, TRANS),
    ("stem penalty", lambda: G.stem_penalty(30.0), math.e**-3, TRANS),
    ("final score", lambda: G.final_score(1.0, 0.0), 1.0, EXACT),
    ("final score", lambda: G.final_score(0.8, 1.0), 0.0, EXACT),
    ("final score", lambda: G.final_score(0.5, 0.5), 0.25, EXACT),
    ("final score", lambda: G.final_score(0.9, 0.1), 0.81, EXACT),
    ("final score", lambda: G.final_score(0.45, 0.2), 0.36, EXACT),
    # fusion: C = 2 |S - 0.5|, w = min(0.3, 0.6 C), S = (1 - w) S_CV + w S_ML
    ("confidence", lambda: Fu.confidence(0.5), 0.0, EXACT),
    ("confidence", lambda: Fu.confidence(1.0), 1.0, EXACT),
    ("confidence", lambda: Fu.confidence(0.0), 1.0, EXACT),
    ("confidence", lambda: Fu.confidence(0.75), 0.5, EXACT),
    ("confidence", lambda: Fu.confidence(0.9), 0.8, EXACT),
    ("confidence", lambda: Fu.confidence(0.9, "printed"), 0.2, EXACT),
    ("ml weight", lambda: Fu.ml_weight(0.0), 0.0, EXACT),
    ("ml weight", lambda: Fu.ml_weight(0.25), 0.15, EXACT),
    ("ml weight", lambda: Fu.ml_weight(0.5), 0.3, EXACT),
    ("ml weight", lambda: Fu.ml_weight(1.0), 0.3, EXACT),
    ("ml weight", lambda: Fu.ml_weight(0.4), 0.24, EXACT),
    ("hybrid", lambda: Fu.hybrid_score(1.0, 0.0, 1.0)[0], 0.7, EXACT),
    ("hybrid", lambda: Fu.hybrid_score(0.5, 1.0, 0.25)[0], 0.85 * 0.5 + 0.15, EXACT),
    ("hybrid", lambda: Fu.hybrid_score(0.8, 0.2, 0.0)[0], 0.8, EXACT),
    ("hybrid", lambda: Fu.hybrid_score(0.0, 1.0, 0.5)[0], 0.3, EXACT),
    ("hybrid", lambda: Fu.hybrid_score(0.6, 0.9, 0.1)[0], 0.94 * 0.6 + 0.06 * 0.9, EXACT),
    ("hybrid", lambda: Fu.hybrid_score(0.6, 0.9, 0.9, Fu.FusionConfig.fixed(0.3))[0], 0.7 * 0.6 + 0.3 * 0.9, EXACT),
    # weighted BCE, w_p = 2: -(2 y log p + (1 - y) log(1 - p)), batch mean
    ("loss", _bce([0.0], [1]), 2 * math.log(2), TRANS),
    ("loss", _bce([0.0], [0]), math.log(2), TRANS),
    ("loss", _bce([math.log(3)], [1]), -2 * math.log(0.75), TRANS),
    ("loss", _bce([math.log(3)], [0]), -math.log(0.25), TRANS),
    ("loss", _bce([0.0, 0.0], [1, 0]), 1.5 * math.log(2), TRANS),
    ("loss", _bce([-math.log(4)], [1]), -2 * math.log(0.2), TRANS),
]


def run_cases():
    """``[(law, got, expected, tol, ok)]`` for every case."""
    out = []
    for law, thunk, expected, tol in CASES:
        got = float(thunk())
        out.append((law, got, expected, tol, abs(got - expected) <= tol))
    return out
