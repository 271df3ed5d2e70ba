"""Metric suite and ablation runner on synthetic corpora with ground truth.

Metrics per scene (all against the generator's annotations):

* GPA  - 3D distance (mm) between the chosen point and the annotated grasp
  point of the selected leaf.
* FAS  - chosen pixel within 5 mm of the annotated midrib while at least
  10 mm from the leaf edge.
* OSR-proxy - chosen pixel inside the ground-truth success region of a
  graspable leaf.  This is a proxy: no physical grasp is executed.
* leaf OSR-proxy - the selected leaf is graspable.
* ECH  - OSR-proxy restricted to scenes whose selected leaf is tagged hard.
* PT   - wall-clock selection time, only recorded when timing is requested
  (it is the one metric that is not reproducible run to run).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .fusion import FusionConfig
from .geometry import DegenerateLeafError
from .grasp import GraspConfig, NoCandidateError
from .leafselect import LeafSelectConfig, NoViableLeafError
from .nn.model import ModelWeights
from .pipeline import Pipeline, PipelineConfig
from .scene import Scene, SynthesisParams, synthesize_scene

FAS_MIDRIB_MM = 5.0
FAS_EDGE_MM = 10.0
LEAF_FEATURES = ("clutter", "distance", "visibility")
GRASP_FEATURES = ("flatness", "approach", "edge", "accessibility")
CAP_SWEEP = (0.05, 0.3, 0.5, 1.0)
FIXED_BLEND = 0.3  # neural share of the fixed 30/70 baseline
REFERENCE_SIZE = 300
# The default 640x480 scene scaled by 2.25 (focal and leaf sizes alike) to a 1440x1080 sensor.
LATENCY_PARAMS = SynthesisParams(width=1440, height=1080, focal=1000.0, leaf_size=(67.0, 157.0))


class EvaluationError(ValueError):
    pass


def reference_corpus(n: int = REFERENCE_SIZE, seed: int = 0, params: SynthesisParams = SynthesisParams()) -> list[Scene]:
    """The fixed synthetic evaluation corpus: scene ``i`` uses generator seed ``seed * 100003 + i``."""
    return [
        synthesize_scene(replace(params, seed=seed * 100003 + i), scene_id=f"ref-{seed}-{i:04d}") for i in range(n)
    ]


def point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(x, dtype=np.float64) for x in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


@dataclass
class SceneResult:
    scene_id: str
    leaf_id: int = -1
    u: int = -1
    v: int = -1
    gpa_mm: float = math.nan
    midrib_mm: float = math.nan
    edge_mm: float = math.nan
    fas: bool = False
    success: bool = False
    leaf_ok: bool = False
    hard: bool = False
    fallback: bool = False
    time_ms: float = math.nan
    error: str = ""


def score_selection(scene: Scene, leaf_id: int, pixel, point, d_edge_px: float) -> dict:
    """Ground-truth metrics for one chosen pixel on ``leaf_id``."""
    if leaf_id not in scene.truth:
        raise EvaluationError(f"{scene.scene_id}: no ground truth for leaf {leaf_id}")
    t = scene.truth[leaf_id]
    k = scene.intrinsics
    u, v = pixel
    z = float(point[2])
    gu, gv = t.grasp
    gz = float(scene.depth.values[gv, gu])
    g = np.array([(gu - k.cx) * gz / k.fx, (gv - k.cy) * gz / k.fy, gz])
    mm_per_px = 1000.0 * z / k.fx
    midrib_mm = point_segment_distance((u, v), t.midrib[0], t.midrib[1]) * mm_per_px
    edge_mm = d_edge_px * mm_per_px
    return {
        "gpa_mm": 1000.0 * float(np.linalg.norm(np.asarray(point, dtype=np.float64) - g)),
        "midrib_mm": midrib_mm,
        "edge_mm": edge_mm,
        "fas": bool(midrib_mm <= FAS_MIDRIB_MM and edge_mm >= FAS_EDGE_MM),
        "success": bool(t.graspable and t.region[v, u]),
        "leaf_ok": bool(t.graspable),
        "hard": t.hard,
    }


def evaluate_scene(pipeline: Pipeline, scene: Scene, timing: bool = False) -> SceneResult:
    if not scene.truth:
        raise EvaluationError(f"{scene.scene_id}: scene carries no ground truth")
    try:
        sel = pipeline.select(scene)
    except (NoViableLeafError, NoCandidateError, DegenerateLeafError) as exc:
        return SceneResult(scene.scene_id, error=f"{type(exc).__name__}: {exc}")
    r, c = sel.context.local(*sel.pixel)
    m = score_selection(scene, sel.leaf_id, sel.pixel, sel.point, float(sel.context.d_edge[r, c]))
    return SceneResult(
        scene.scene_id, sel.leaf_id, sel.pixel[0], sel.pixel[1], fallback=sel.decision.fallback,
        time_ms=sel.timings["total_ms"] if timing else math.nan, **m,
    )


def _pct(flags) -> float:
    flags = list(flags)
    return 100.0 * sum(flags) / len(flags) if flags else math.nan


@dataclass
class EvalReport:
    label: str
    fingerprint: str
    rows: list = field(default_factory=list)

    @property
    def ok_rows(self) -> list:
        return [r for r in self.rows if not r.error]

    def aggregate(self) -> dict:
        ok = self.ok_rows
        hard = [r for r in self.rows if r.hard]
        times = [r.time_ms for r in ok if not math.isnan(r.time_ms)]
        return {
            "scenes": len(self.rows),
            "failed": len(self.rows) - len(ok),
            "GPA_mm": float(np.mean([r.gpa_mm for r in ok])) if ok else math.nan,
            "FAS_pct": _pct(r.fas for r in self.rows),
            "ECH_pct": _pct(r.success for r in hard),
            "OSR_proxy_pct": _pct(r.success for r in self.rows),
            "leaf_OSR_proxy_pct": _pct(r.leaf_ok for r in self.rows),
            "fallback_pct": _pct(r.fallback for r in ok),
            "PT_ms": float(np.median(times)) if times else math.nan,
        }


def evaluate(scenes: Iterable[Scene], cfg: PipelineConfig = PipelineConfig(), weights: Optional[ModelWeights] = None,
             timing: bool = False, label: str = "full") -> EvalReport:
    """Run the pipeline over every scene; failed selections count as misses."""
    pipe = Pipeline(cfg, weights)
    fp = cfg.fingerprint() + ("-" + weights.checksum()[:8] if weights is not None else "-geometric")
    rep = EvalReport(label, fp)
    for scene in scenes:
        rep.rows.append(evaluate_scene(pipe, scene, timing))
    return rep


def latency_benchmark(n: int = 20, seed: int = 0, weights: Optional[ModelWeights] = None,
                      cfg: PipelineConfig = PipelineConfig(), params: SynthesisParams = LATENCY_PARAMS) -> list[dict]:
    """Per-scene stage timings (ms) of full selections on ``n`` large scenes.

    One untimed warm-up selection runs first so compilation and cache effects
    are not counted.
    """
    scenes = reference_corpus(n, seed, params)
    pipe = Pipeline(cfg, weights)
    pipe.select(scenes[0])
    return [pipe.select(sc).timings for sc in scenes]


# ---------------------------------------------------------------------------
# ablation


@dataclass(frozen=True)
class AblationPlan:
    leaf_drops: tuple = LEAF_FEATURES
    grasp_drops: tuple = GRASP_FEATURES
    caps: tuple = CAP_SWEEP
    fixed_blend: bool = True

    def validate(self):
        for f in self.leaf_drops:
            if f not in LEAF_FEATURES:
                raise EvaluationError(f"unknown leaf feature {f!r}; expected one of {LEAF_FEATURES}")
        for f in self.grasp_drops:
            if f not in GRASP_FEATURES:
                raise EvaluationError(f"unknown grasp feature {f!r}; expected one of {GRASP_FEATURES}")
        for c in self.caps:
            if not 0.0 <= c <= 1.0:
                raise EvaluationError(f"cap {c} outside [0, 1]")
        return self


def ablation_configs(base: PipelineConfig, plan: AblationPlan, with_model: bool) -> list[tuple[str, PipelineConfig, bool]]:
    """``(label, config, uses_model)`` for every row of the ablation table."""
    plan.validate()
    geo = replace(base, fusion=FusionConfig.geometric_only())
    rows = [("geometric-only", geo, False)]
    if with_model:
        rows.insert(0, ("full", base, True))
    for f in plan.leaf_drops:
        rows.append((f"-{f}", replace(geo, leaf=replace(geo.leaf, weights=geo.leaf.weights.drop(f))), False))
    for f in plan.grasp_drops:
        rows.append((f"-{f}", replace(geo, grasp=replace(geo.grasp, weights=geo.grasp.weights.drop(f))), False))
    if with_model:
        for c in plan.caps:
            rows.append((f"cap={c:g}", replace(base, fusion=replace(base.fusion, cap=c)), True))
        if plan.fixed_blend:
            rows.append(("fixed 30/70", replace(base, fusion=FusionConfig.fixed(FIXED_BLEND)), True))
    return rows


def ablate(scenes, plan: AblationPlan = AblationPlan(), base: PipelineConfig = PipelineConfig(),
           weights: Optional[ModelWeights] = None) -> list[EvalReport]:
    """One report per configuration, same scenes throughout.  Fusion rows need weights."""
    scenes = list(scenes)
    out = []
    for label, cfg, uses_model in ablation_configs(base, plan, weights is not None):
        out.append(evaluate(scenes, cfg, weights if uses_model else None, label=label))
    return out


# ---------------------------------------------------------------------------
# tables

ROW_FIELDS = [f.name for f in dataclasses.fields(SceneResult)]
AGG_FIELDS = ("GPA_mm", "FAS_pct", "ECH_pct", "OSR_proxy_pct", "leaf_OSR_proxy_pct", "fallback_pct", "PT_ms", "failed")


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.4f}"
    return str(x)


def rows_tsv(report: EvalReport) -> str:
    lines = ["\t".join(ROW_FIELDS)]
    for r in report.rows:
        lines.append("\t".join(_fmt(getattr(r, f)) for f in ROW_FIELDS))
    return "\n".join(lines) + "\n"


def summary_tsv(reports: list) -> str:
    lines = ["\t".join(("config", "fingerprint") + AGG_FIELDS)]
    for rep in reports:
        agg = rep.aggregate()
        lines.append("\t".join([rep.label, rep.fingerprint] + [_fmt(agg[f]) for f in AGG_FIELDS]))
    return "\n".join(lines) + "\n"


def summary_markdown(reports: list) -> str:
    head = ["Configuration", "GPA (mm)", "FAS (%)", "ECH (%)", "OSR-proxy (%)", "Leaf OSR-proxy (%)", "PT (ms)"]
    keys = ("GPA_mm", "FAS_pct", "ECH_pct", "OSR_proxy_pct", "leaf_OSR_proxy_pct", "PT_ms")
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for rep in reports:
        agg = rep.aggregate()
        cells = ["n/a" if math.isnan(agg[k]) else f"{agg[k]:.1f}" for k in keys]
        lines.append("| " + " | ".join([rep.label] + cells) + " |")
    lines.append("")
    lines.append("OSR-proxy = chosen pixel inside the generator's success region of a graspable leaf "
                 "(no physical grasp); PT only when timing is enabled.")
    return "\n".join(lines) + "\n"
