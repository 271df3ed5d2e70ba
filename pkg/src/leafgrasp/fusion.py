"""Confidence-weighted fusion of geometric and neural candidate scores, fallback and Kalman smoothing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grasp import GraspCandidate

CONFIDENCE_MODES = ("extremes", "printed")


@dataclass(frozen=True)
class KalmanConfig:
    process_sigma: float = 2.0  # px, white-acceleration noise per frame
    measurement_sigma: float = 3.0  # px
    gate: float = 50.0  # px; larger innovations reset the track
    initial_velocity_sigma: float = 10.0  # px / frame


@dataclass(frozen=True)
class FusionConfig:
    cap: float = 0.3
    slope: float = 0.6
    fallback_threshold: float = 0.4
    # "extremes": C = |S - 0.5| * 2 (sure predictions near 0 or 1 are confident).
    # "printed":  C = 1 - |S - 0.5| * 2.
    confidence_mode: str = "extremes"
    # Fixed-blend baseline: when set, every candidate uses this neural weight,
    # confidence and fallback are ignored.
    fixed_weight: Optional[float] = None
    kalman: KalmanConfig = field(default_factory=KalmanConfig)

    def validate(self):
        if not 0.0 <= self.cap <= 1.0:
            raise ValueError(f"cap {self.cap} outside [0, 1]")
        if not 0.0 <= self.fallback_threshold <= 1.0:
            raise ValueError(f"fallback threshold {self.fallback_threshold} outside [0, 1]")
        if self.slope < 0:
            raise ValueError("slope must be >= 0")
        if self.confidence_mode not in CONFIDENCE_MODES:
            raise ValueError(f"confidence_mode must be one of {CONFIDENCE_MODES}")
        if self.fixed_weight is not None and not 0.0 <= self.fixed_weight <= 1.0:
            raise ValueError("fixed_weight outside [0, 1]")
        return self

    @classmethod
    def geometric_only(cls) -> "FusionConfig":
        return cls(cap=0.0)

    @classmethod
    def fixed(cls, ml_weight: float = 0.3) -> "FusionConfig":
        return cls(fixed_weight=ml_weight)


# ---------------------------------------------------------------------------
# scalar laws


def confidence(s_pred, mode: str = "extremes"):
    """Prediction confidence in [0, 1] from a probability in [0, 1]."""
    s = np.asarray(s_pred, dtype=np.float64)
    if np.any(~np.isfinite(s)) or np.any((s < 0) | (s > 1)):
        raise ValueError("predictions must lie in [0, 1]")
    spread = np.abs(s - 0.5) * 2.0
    if mode == "extremes":
        c = spread
    elif mode == "printed":
        c = 1.0 - spread
    else:
        raise ValueError(f"unknown confidence mode {mode!r}")
    return float(c) if np.ndim(c) == 0 else c


def ml_weight(c, cap: float = 0.3, slope: float = 0.6):
    """``w_ML = min(cap, C * slope)``."""
    w = np.minimum(cap, np.asarray(c, dtype=np.float64) * slope)
    return float(w) if np.ndim(w) == 0 else w


def hybrid_score(s_cv, s_ml, c, cfg: FusionConfig = FusionConfig()):
    """``(S_hybrid, w_ML)`` with ``S_hybrid = (1 - w) S_CV + w S_ML``."""
    if cfg.fixed_weight is not None:
        w = np.full(np.shape(c), cfg.fixed_weight, dtype=np.float64)
        w = float(w) if w.ndim == 0 else w
    else:
        w = ml_weight(c, cfg.cap, cfg.slope)
    s = (1.0 - np.asarray(w)) * np.asarray(s_cv, dtype=np.float64) + np.asarray(w) * np.asarray(s_ml, dtype=np.float64)
    return (float(s) if np.ndim(s) == 0 else s), w


def normalize_geometric(s_final) -> np.ndarray:
    """Divide by the candidate-set maximum (all zeros stay zero)."""
    s = np.asarray(s_final, dtype=np.float64)
    top = float(s.max()) if s.size else 0.0
    return s / top if top > 0 else np.zeros_like(s)


# ---------------------------------------------------------------------------
# decisions


@dataclass
class FusionDecision:
    candidates: list
    s_cv: np.ndarray
    s_ml: np.ndarray  # NaN when no model ran
    c_pred: np.ndarray
    w_ml: np.ndarray
    s_hybrid: np.ndarray
    chosen_index: int
    fallback: bool
    model_used: bool
    reason: str = ""

    @property
    def chosen(self) -> GraspCandidate:
        return self.candidates[self.chosen_index]

    @property
    def pixel(self) -> tuple[int, int]:
        return self.chosen.pixel

    def rows(self):
        """Per-candidate audit rows (dicts) in candidate order."""
        for i, c in enumerate(self.candidates):
            yield {
                "u": c.u, "v": c.v, "s_final": c.s_final, "s_cv": float(self.s_cv[i]),
                "s_ml": float(self.s_ml[i]), "c_pred": float(self.c_pred[i]), "w_ml": float(self.w_ml[i]),
                "s_hybrid": float(self.s_hybrid[i]), "chosen": int(i == self.chosen_index),
            }


def _argmax(primary: np.ndarray, candidates: Sequence[GraspCandidate]) -> int:
    """Index of the maximum of ``primary``; ties broken by S_final, then smaller (u, v)."""
    keys = [(-float(primary[i]), -c.s_final, c.u, c.v) for i, c in enumerate(candidates)]
    return min(range(len(candidates)), key=keys.__getitem__)


def decide_scores(candidates: Sequence[GraspCandidate], s_ml=None, cfg: FusionConfig = FusionConfig()) -> FusionDecision:
    """Fuse given neural probabilities (``None`` = no model) with the candidates' geometric scores."""
    cfg.validate()
    if not candidates:
        raise ValueError("decide needs at least one candidate")
    candidates = list(candidates)
    n = len(candidates)
    s_cv = normalize_geometric([c.s_final for c in candidates])
    if s_ml is None:
        nan = np.full(n, np.nan)
        return FusionDecision(candidates, s_cv, nan, np.zeros(n), np.zeros(n), s_cv.copy(),
                              _argmax(s_cv, candidates), True, False, "no model")
    s_ml = np.asarray(s_ml, dtype=np.float64).reshape(-1)
    if s_ml.shape != (n,):
        raise ValueError(f"{s_ml.size} neural scores for {n} candidates")
    c_pred = np.asarray(confidence(s_ml, cfg.confidence_mode), dtype=np.float64).reshape(n)
    s_hyb, w = hybrid_score(s_cv, s_ml, c_pred, cfg)
    s_hyb = np.asarray(s_hyb, dtype=np.float64).reshape(n)
    w = np.asarray(w, dtype=np.float64).reshape(n)
    if cfg.fixed_weight is None and float(c_pred.max()) < cfg.fallback_threshold:
        return FusionDecision(candidates, s_cv, s_ml, c_pred, w, s_hyb, _argmax(s_cv, candidates), True, True,
                              "low confidence")
    return FusionDecision(candidates, s_cv, s_ml, c_pred, w, s_hyb, _argmax(s_hyb, candidates), False, True)


def decide(candidates, patches=None, model: Optional[Callable] = None, cfg: FusionConfig = FusionConfig()) -> FusionDecision:
    """Run ``model`` (patches -> probabilities) on the candidate patches and fuse.

    A missing model, or a model that fails, gives the pure geometric decision
    with the fallback flag set.
    """
    if model is None or patches is None:
        return decide_scores(candidates, None, cfg)
    probs = np.asarray(model(np.asarray(patches)), dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(probs)):
        d = decide_scores(candidates, None, cfg)
        d.reason = "model produced non-finite output"
        return d
    return decide_scores(candidates, probs, cfg)


# ---------------------------------------------------------------------------
# temporal smoothing


class PixelKalman:
    """Constant-velocity filter on (u, v) with innovation gating.

    A measurement farther than ``gate`` pixels from the prediction resets the
    track to that measurement instead of dragging the estimate across.
    """

    def __init__(self, cfg: KalmanConfig = KalmanConfig()):
        self.cfg = cfg
        self.x: Optional[np.ndarray] = None
        self.P: Optional[np.ndarray] = None
        self.F = np.eye(4)
        self.F[0, 2] = self.F[1, 3] = 1.0
        self.H = np.eye(2, 4)
        q = cfg.process_sigma**2
        block = q * np.array([[0.25, 0.5], [0.5, 1.0]])  # white acceleration, dt = 1
        self.Q = np.zeros((4, 4))
        for a in (0, 1):
            idx = np.ix_([a, a + 2], [a, a + 2])
            self.Q[idx] = block
        self.R = np.eye(2) * cfg.measurement_sigma**2
        self.last_innovation = 0.0
        self.resets = 0

    def _reset(self, z):
        self.x = np.array([z[0], z[1], 0.0, 0.0])
        self.P = np.diag([self.cfg.measurement_sigma**2] * 2 + [self.cfg.initial_velocity_sigma**2] * 2)
        self.last_innovation = 0.0

    def update(self, z) -> tuple[float, float]:
        z = np.asarray(z, dtype=np.float64)
        if self.x is None:
            self._reset(z)
            return float(self.x[0]), float(self.x[1])
        x = self.F @ self.x
        P = self.F @ self.P @ self.F.T + self.Q
        y = z - self.H @ x
        self.last_innovation = float(np.hypot(*y))
        if self.last_innovation > self.cfg.gate:
            self.resets += 1
            self._reset(z)
            return float(z[0]), float(z[1])
        S = self.H @ P @ self.H.T + self.R
        K = P @ self.H.T @ np.linalg.inv(S)
        self.x = x + K @ y
        self.P = (np.eye(4) - K @ self.H) @ P
        return float(self.x[0]), float(self.x[1])


def smooth(pixels, cfg: KalmanConfig = KalmanConfig()) -> np.ndarray:
    """Filtered (u, v) per frame for a sequence of chosen pixels (or decisions)."""
    kf = PixelKalman(cfg)
    out = []
    for p in pixels:
        p = p.pixel if hasattr(p, "pixel") else p
        out.append(kf.update(p))
    if not out:
        raise ValueError("smooth needs at least one frame")
    return np.array(out)
