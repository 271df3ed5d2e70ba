import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leafgrasp import grasp as G
from leafgrasp.nn import layers as L
from formula_cases import CASES


@pytest.mark.parametrize("law,thunk,expected,tol", CASES, ids=[f"{c[0]}-{i}" for i, c in enumerate(CASES)])
def test_hand_derived(law, thunk, expected, tol):
    assert abs(float(thunk()) - expected) <= tol


def test_every_law_has_five_cases():
    from collections import Counter

    counts = Counter(c[0] for c in CASES)
    for law in ("clutter", "distance", "visibility", "flatness", "approach", "edge", "accessibility",
                "grasp score", "final score", "stem penalty", "confidence", "ml weight", "hybrid", "loss"):
        assert counts[law] >= 5, law


unit = st.floats(0.0, 1.0, allow_nan=False)


@given(unit, unit, unit, unit)
def test_grasp_score_stays_in_unit_interval(f, a, e, acc):
    assert -1e-12 <= G.combine(f, a, e, acc) <= 1.0 + 1e-12


@given(unit, st.floats(0.0, 200.0))
def test_final_score_never_exceeds_grasp_score(s, d):
    assert 0.0 <= G.final_score(s, G.stem_penalty(d)) <= s


@given(st.floats(-20, 20), st.sampled_from([0.0, 1.0]))
def test_bce_logit_form_matches_probability_form(z, y):
    loss, _ = L.weighted_bce(np.array([z]), np.array([y]))
    p = 1 / (1 + math.exp(-z))
    if 1e-12 < p < 1 - 1e-12:
        assert loss == pytest.approx(L.weighted_bce_prob(p, y), rel=1e-9, abs=1e-12)


def test_weight_drop_renormalises():
    w = G.GraspWeights().drop("approach")
    assert w.approach == 0.0
    assert w.flatness + w.edge + w.accessibility == pytest.approx(1.0)
    assert w.flatness / w.edge == pytest.approx(0.25 / 0.20)
