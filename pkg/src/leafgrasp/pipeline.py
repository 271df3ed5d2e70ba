"""End-to-end selection: leaf choice, grasp candidates, CNN scoring and fusion on one scene."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fusion import FusionConfig, FusionDecision, decide_scores
from .grasp import GraspConfig, GraspContext
from .leafselect import LeafSelectConfig, leaf_models, select_leaf
from .nn.model import GraspPointCNN, ModelWeights
from .scene import Scene
from .selfsup import extract_patches


@dataclass(frozen=True)
class PipelineConfig:
    leaf: LeafSelectConfig = field(default_factory=LeafSelectConfig)
    grasp: GraspConfig = field(default_factory=GraspConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Selection:
    scene_id: str
    leaf_id: int
    leaf_scores: list
    decision: FusionDecision
    context: GraspContext
    timings: dict

    @property
    def pixel(self) -> tuple[int, int]:
        return self.decision.pixel

    @property
    def point(self) -> tuple[float, float, float]:
        return self.decision.chosen.point

    @property
    def candidates(self) -> list:
        return self.decision.candidates


class Pipeline:
    """Geometric teacher plus optional CNN, fused per :class:`FusionConfig`.

    Without weights the pipeline is geometric-only.
    """

    def __init__(self, cfg: PipelineConfig = PipelineConfig(), weights: Optional[ModelWeights] = None):
        cfg.fusion.validate()
        self.cfg = cfg
        self.weights = weights
        self.net = GraspPointCNN(weights, np.float32) if weights is not None else None

    def score_patches(self, patches: np.ndarray) -> np.ndarray:
        return np.asarray(self.net(patches), dtype=np.float64)

    def select(self, scene: Scene) -> Selection:
        t0 = time.perf_counter()
        models, _ = leaf_models(scene)
        lid, scores = select_leaf(scene, self.cfg.leaf, models)
        t1 = time.perf_counter()
        ctx = GraspContext(scene, models[lid], self.cfg.grasp)
        cands = ctx.generate_candidates()
        t2 = time.perf_counter()
        s_ml = None
        if self.net is not None:
            patches = extract_patches(ctx, [c.pixel for c in cands])
            s_ml = self.score_patches(patches)
        t3 = time.perf_counter()
        decision = decide_scores(cands, s_ml, self.cfg.fusion)
        t4 = time.perf_counter()
        timings = {"leaf_ms": 1e3 * (t1 - t0), "grasp_ms": 1e3 * (t2 - t1), "cnn_ms": 1e3 * (t3 - t2),
                   "fusion_ms": 1e3 * (t4 - t3), "total_ms": 1e3 * (t4 - t0)}
        return Selection(scene.scene_id, lid, scores, decision, ctx, timings)
