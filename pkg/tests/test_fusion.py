import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leafgrasp import fusion as Fu
from leafgrasp.grasp import GraspCandidate
from oracles import StubModel


def cand(u, v, s):
    return GraspCandidate(u, v, (0.0, 0.0, 0.4), 1, 1, 1, 1, s, 0.0, s)


CANDS = [cand(10, 10, 0.9), cand(30, 10, 0.8), cand(50, 10, 0.6), cand(70, 10, 0.3)]


@given(st.floats(0.0, 1.0))
def test_weight_never_exceeds_cap(c):
    w = Fu.ml_weight(c)
    assert 0.0 <= w <= 0.3


def test_weight_saturates_at_half_confidence():
    c = np.linspace(0, 1, 1001)
    w = Fu.ml_weight(c)
    np.testing.assert_allclose(w[c <= 0.5], 0.6 * c[c <= 0.5], atol=1e-15)
    assert np.all(w[c >= 0.5] == 0.3)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_hybrid_is_convex_combination(s_cv, s_ml, c):
    s, w = Fu.hybrid_score(s_cv, s_ml, c)
    assert min(s_cv, s_ml) - 1e-12 <= s <= max(s_cv, s_ml) + 1e-12


def test_confidence_modes_are_complementary():
    s = np.linspace(0, 1, 11)
    np.testing.assert_allclose(Fu.confidence(s) + Fu.confidence(s, "printed"), 1.0)
    with pytest.raises(ValueError):
        Fu.confidence(1.2)
    with pytest.raises(ValueError):
        Fu.confidence(0.5, "other")


def test_normalize_geometric():
    np.testing.assert_allclose(Fu.normalize_geometric([0.5, 0.25, 0.0]), [1.0, 0.5, 0.0])
    assert np.all(Fu.normalize_geometric([0.0, 0.0]) == 0)


def test_fallback_exactly_below_threshold():
    # S = 0.3 yields C = 0.4 exactly in floating point (S = 0.7 yields 0.3999...)
    at = 0.3
    assert Fu.confidence(at) == 0.4
    below = float(np.nextafter(at, 0.5))
    assert Fu.confidence(below) < 0.4
    d = Fu.decide(CANDS, np.zeros((4, 9, 32, 32)), StubModel([below, 0.6, 0.5, 0.5]))
    assert d.fallback and d.model_used and d.chosen_index == 0 and d.reason == "low confidence"
    d = Fu.decide(CANDS, np.zeros((4, 9, 32, 32)), StubModel([0.5, 0.5, 0.5, at]))
    assert not d.fallback


@given(st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4))
def test_fallback_law(probs):
    d = Fu.decide_scores(CANDS, probs)
    assert d.fallback == (max(Fu.confidence(p) for p in probs) < 0.4)
    if d.fallback:
        assert d.chosen_index == 0


def test_no_model_is_geometric():
    d = Fu.decide(CANDS)
    assert d.fallback and not d.model_used and d.chosen_index == 0
    assert np.all(np.isnan(d.s_ml))


def test_non_finite_model_output_falls_back():
    d = Fu.decide(CANDS, np.zeros((4, 9, 32, 32)), StubModel([np.nan, 0.1, 0.2, 0.3]))
    assert d.fallback and "non-finite" in d.reason


def test_confident_model_can_flip_close_candidates():
    cands = [cand(10, 10, 0.90), cand(30, 10, 0.88)]
    d = Fu.decide_scores(cands, [0.0, 1.0])
    assert d.chosen_index == 1 and not d.fallback
    # but not a large geometric gap: w <= 0.3 limits the swing
    cands = [cand(10, 10, 0.90), cand(30, 10, 0.40)]
    d = Fu.decide_scores(cands, [0.0, 1.0])
    assert d.chosen_index == 0


def test_cap_zero_equals_geometric_only():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 8))
        cands = [cand(int(rng.integers(0, 100)), int(rng.integers(0, 100)), float(rng.random())) for _ in range(n)]
        a = Fu.decide_scores(cands, rng.random(n), Fu.FusionConfig(cap=0.0))
        b = Fu.decide_scores(cands, None, Fu.FusionConfig.geometric_only())
        assert a.pixel == b.pixel
        assert a.s_hybrid.tobytes() == b.s_hybrid.tobytes()


def test_ties_break_on_geometric_score_then_pixel():
    cands = [cand(30, 10, 0.5), cand(10, 10, 0.5), cand(20, 5, 0.5)]
    d = Fu.decide_scores(cands, None)
    assert d.pixel == (10, 10)


def test_fixed_blend_ignores_confidence():
    d = Fu.decide_scores(CANDS, [0.5, 0.5, 0.5, 0.5], Fu.FusionConfig.fixed(0.3))
    assert not d.fallback
    np.testing.assert_allclose(d.w_ml, 0.3)


def test_config_validation():
    with pytest.raises(ValueError):
        Fu.FusionConfig(cap=1.5).validate()
    with pytest.raises(ValueError):
        Fu.FusionConfig(confidence_mode="x").validate()
    with pytest.raises(ValueError):
        Fu.decide_scores([], None)
    with pytest.raises(ValueError):
        Fu.decide_scores(CANDS, [0.1, 0.2])


# --- Kalman smoothing -------------------------------------------------------


def test_kalman_tracks_constant_velocity():
    t = np.arange(60)
    truth = np.stack([100 + 2.0 * t, 50 + 0.5 * t], axis=1)
    noisy = truth + np.random.default_rng(0).normal(0, 3.0, truth.shape)
    out = Fu.smooth(noisy)
    err_raw = np.abs(noisy[30:] - truth[30:]).mean()
    err_kf = np.abs(out[30:] - truth[30:]).mean()
    assert err_kf < err_raw


def test_kalman_first_frame_passthrough_and_gate_reset():
    kf = Fu.PixelKalman()
    assert kf.update((10, 10)) == (10.0, 10.0)
    kf.update((11, 10))
    assert kf.update((200, 200)) == (200.0, 200.0)
    assert kf.resets == 1


def test_kalman_is_deterministic():
    seq = [(i, 2 * i) for i in range(20)]
    assert np.array_equal(Fu.smooth(seq), Fu.smooth(seq))
    with pytest.raises(ValueError):
        Fu.smooth([])
