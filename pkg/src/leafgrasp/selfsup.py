"""Self-supervised training data: teacher positives, augmentation, mined negatives, filtering
and the append-only on-disk dataset.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import map_coordinates

from .distance import distance_transform
from .geometry import DegenerateLeafError, LeafModel
from .grasp import HALF, PATCH, GraspConfig, GraspContext, NoCandidateError, stem_mask_for
from .leafselect import LeafSelectConfig, NoViableLeafError, select_leaf
from .scene import Scene

log = logging.getLogger(__name__)

DEPTH_SCALE = 0.05  # metres mapped to +-1 in the depth channel
CHANNELS = ("depth", "mask", "flatness", "approach", "edge", "accessibility", "stem_penalty", "s_grasp", "clutter")
S_GRASP_CH, PENALTY_CH = 7, 6

POSITIVE = "teacher-positive"
AUGMENTED = "augmented"
NEG_TIP, NEG_STEM, NEG_EDGE = "negative:tip", "negative:stem", "negative:edge"
EXP_SUCCESS, EXP_FAILURE = "experience:success", "experience:failure"
PROVENANCES = (POSITIVE, AUGMENTED, NEG_TIP, NEG_STEM, NEG_EDGE, EXP_SUCCESS, EXP_FAILURE)
LABELS = {POSITIVE: 1, AUGMENTED: 1, NEG_TIP: 0, NEG_STEM: 0, NEG_EDGE: 0, EXP_SUCCESS: 1, EXP_FAILURE: 0}


# ---------------------------------------------------------------------------
# samples


@dataclass(frozen=True)
class AugmentRecipe:
    rotation_k: int = 0  # quarter turns, counter-clockwise
    crop_scale: float = 1.0
    contrast: float = 1.0
    brightness: float = 0.0
    flip: bool = False
    noise_sigma: float = 0.0
    noise_seed: int = 0

    @property
    def recipe_id(self) -> str:
        return (
            f"r{self.rotation_k * 90}-c{self.crop_scale:.4f}-k{self.contrast:.4f}"
            f"-b{self.brightness:+.4f}-f{int(self.flip)}-n{self.noise_sigma:g}"
        )


@dataclass(frozen=True, eq=False)
class TrainingSample:
    patch: np.ndarray  # (9, 32, 32) float32
    label: int
    provenance: str
    scene_id: str
    pixel: tuple
    leaf_id: int = 0
    invalid_fraction: float = 0.0
    recipe: Optional[AugmentRecipe] = None
    variant: int = 0

    def __post_init__(self):
        if self.provenance not in LABELS:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if LABELS[self.provenance] != self.label:
            raise ValueError(f"label {self.label} inconsistent with provenance {self.provenance}")
        if self.patch.shape != (len(CHANNELS), PATCH, PATCH):
            raise ValueError(f"patch shape {self.patch.shape}")

    @property
    def key(self) -> tuple:
        return (self.scene_id, self.leaf_id, int(self.pixel[0]), int(self.pixel[1]), self.provenance, self.variant)

    @property
    def s_final_center(self) -> float:
        c = self.patch[:, HALF, HALF]
        return float(c[S_GRASP_CH]) * (1.0 - float(c[PENALTY_CH]))

    @property
    def mask_coverage(self) -> float:
        return float(self.patch[1].mean())


def extract_patch(ctx: GraspContext, at: tuple[int, int]) -> tuple[np.ndarray, float]:
    """9x32x32 patch centred on ``at`` plus the fraction of window pixels without depth.

    Window rows/cols run from ``at - 16`` to ``at + 15``.  Depth outside the
    image is edge-replicated; the depth channel is ``(d - d_center) / 0.05``
    clipped to [-1, 1], with 0 where depth is missing.
    """
    u, v = at
    r, c = ctx.local(u, v)
    if not (0 <= r < ctx.leaf_mask.shape[0] and 0 <= c < ctx.leaf_mask.shape[1]) or not ctx.leaf_mask[r, c]:
        raise ValueError(f"({u}, {v}) is outside leaf {ctx.leaf.leaf_id}")
    if not ctx.valid[r, c]:
        raise ValueError(f"({u}, {v}) has no depth")
    rows, cols = slice(r - HALF, r + HALF), slice(c - HALF, c + HALF)
    d = ctx.depth[rows, cols].astype(np.float64)
    ok = np.isfinite(d) & (d > 0)
    center = float(ctx.depth[r, c])
    out = np.empty((len(CHANNELS), PATCH, PATCH), dtype=np.float32)
    out[0] = np.where(ok, np.clip((np.where(ok, d, center) - center) / DEPTH_SCALE, -1.0, 1.0), 0.0)
    out[1] = ctx.leaf_mask[rows, cols]
    out[2:] = ctx.score_stack[:, rows, cols]
    return out, float(1.0 - ok.mean())


def extract_patches(ctx: GraspContext, pixels) -> np.ndarray:
    """Stacked patches for many pixels (same values as :func:`extract_patch`)."""
    return np.stack([extract_patch(ctx, px)[0] for px in pixels])


def make_sample(ctx: GraspContext, at, provenance: str, variant: int = 0) -> TrainingSample:
    patch, invalid = extract_patch(ctx, at)
    return TrainingSample(
        patch, LABELS[provenance], provenance, ctx.scene.scene_id, (int(at[0]), int(at[1])),
        ctx.leaf.leaf_id, invalid, None, variant,
    )


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    rotations: tuple = (1, 2, 3)  # one variant per entry
    crop_scale: tuple = (0.9, 1.0)
    jitter: float = 0.1  # +- fraction for contrast, absolute for brightness
    noise_sigma: float = 0.01
    flip: bool = True

    @property
    def n_variants(self) -> int:
        return len(self.rotations)

    def disabled(self) -> "AugmentConfig":
        """Rotations only: no crop, jitter, noise or flip."""
        return replace(self, crop_scale=(1.0, 1.0), jitter=0.0, noise_sigma=0.0, flip=False)


def draw_recipes(cfg: AugmentConfig, rng: np.random.Generator) -> list[AugmentRecipe]:
    recipes = []
    for k in cfg.rotations:
        scale = float(rng.uniform(*cfg.crop_scale))
        contrast = float(rng.uniform(1 - cfg.jitter, 1 + cfg.jitter))
        bright = float(rng.uniform(-cfg.jitter, cfg.jitter))
        flip = bool(rng.integers(0, 2)) if cfg.flip else False
        seed = int(rng.integers(0, 2**63 - 1))
        recipes.append(AugmentRecipe(int(k), scale, contrast, bright, flip, cfg.noise_sigma, seed))
    return recipes


def _rescale(ch: np.ndarray, scale: float, order: int) -> np.ndarray:
    """Zoom the central ``scale`` fraction of the patch back to full size."""
    if scale == 1.0:
        return ch.copy()
    c = (PATCH - 1) / 2.0
    grid = (np.arange(PATCH) - c) * scale + c
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    return map_coordinates(ch, [yy, xx], order=order, mode="nearest")


def apply_recipe(patch: np.ndarray, recipe: AugmentRecipe) -> np.ndarray:
    """Rotate, crop-zoom, flip, jitter and add noise.

    The mask channel only moves (nearest-neighbour resampling) so it stays
    binary; the depth channel gets contrast but no brightness shift so the
    centre keeps reading 0.
    """
    out = np.rot90(patch, recipe.rotation_k, axes=(1, 2)).astype(np.float64)
    out = np.stack([_rescale(ch, recipe.crop_scale, 0 if i == 1 else 1) for i, ch in enumerate(out)])
    if recipe.flip:
        out = out[:, :, ::-1]
    out[0] = out[0] * recipe.contrast
    out[2:] = out[2:] * recipe.contrast + recipe.brightness
    if recipe.noise_sigma > 0:
        rng = np.random.default_rng(recipe.noise_seed)
        noise = rng.normal(0.0, recipe.noise_sigma, size=out.shape)
        noise[1] = 0.0
        out += noise
    out[0] = np.clip(out[0], -1.0, 1.0)
    out[2:8] = np.clip(out[2:8], 0.0, 1.0)
    out[8] = np.clip(out[8], -1.0, 1.0)
    return np.ascontiguousarray(out, dtype=np.float32)


def augment(sample: TrainingSample, cfg: AugmentConfig = AugmentConfig(), rng: np.random.Generator | None = None):
    """One augmented variant per configured rotation (three by default)."""
    if sample.label != 1:
        raise ValueError("only positive samples are augmented")
    rng = rng if rng is not None else np.random.default_rng(0)
    out = []
    for i, recipe in enumerate(draw_recipes(cfg, rng), start=1):
        out.append(
            TrainingSample(
                apply_recipe(sample.patch, recipe), 1, AUGMENTED, sample.scene_id, sample.pixel,
                sample.leaf_id, sample.invalid_fraction, recipe, i,
            )
        )
    return out


# ---------------------------------------------------------------------------
# negatives


@dataclass(frozen=True)
class MiningConfig:
    per_positive: int = 3
    band: float = 3.0  # px; boundary band searched for tips
    tip_window: int = 7  # local-maximum neighbourhood
    edge_percentile: float = 90.0
    edge_floor: float = 1e-4  # m/px; gradients at or below never count as edges
    min_gap: float = 4.0  # px between two negatives of one leaf


def _local_maxima(values: np.ndarray, valid: np.ndarray, window: int) -> np.ndarray:
    from scipy.ndimage import maximum_filter

    v = np.where(valid, values, -np.inf)
    return valid & (v == maximum_filter(v, size=window, mode="constant", cval=-np.inf))


def tip_pixels(ctx: GraspContext, cfg: MiningConfig = MiningConfig()) -> list[tuple[int, int]]:
    """Boundary-band pixels that are local maxima of distance from the leaf core.

    The core is the maximum of the interior distance transform; the leaf's
    extremities (tips) are the points of the outline farthest from it locally.
    """
    dt = distance_transform(ctx.leaf_mask)
    core = np.unravel_index(int(np.argmax(dt.values)), dt.values.shape)
    yy, xx = np.indices(ctx.leaf_mask.shape)
    reach = np.hypot(yy - core[0], xx - core[1])
    band = ctx.candidates & (dt.values <= cfg.band)
    peaks = _local_maxima(reach, band, cfg.tip_window)
    rr, cc = np.nonzero(peaks)
    order = np.lexsort((cc, rr, -reach[rr, cc]))
    return [(int(cc[i]) + ctx.origin[0], int(rr[i]) + ctx.origin[1]) for i in order]


def stem_pixels(ctx: GraspContext) -> list[tuple[int, int]]:
    """Scorable leaf pixels inside the stem region, nearest the leaf core first."""
    stem = stem_mask_for(ctx.scene, ctx.leaf.leaf_id, ctx.cfg)
    if stem is None:
        return []
    u0, v0 = ctx.origin
    sel = ctx.candidates & (ctx.d_stem == 0)
    rr, cc = np.nonzero(sel)
    cu, cv = ctx.leaf.centroid_uv
    d = np.hypot(cc + u0 - cu, rr + v0 - cv)
    order = np.lexsort((cc, rr, d))
    return [(int(cc[i]) + u0, int(rr[i]) + v0) for i in order]


def edge_pixels(ctx: GraspContext, cfg: MiningConfig = MiningConfig()) -> list[tuple[int, int]]:
    """Pixels whose depth-gradient magnitude exceeds the leaf's 90th percentile (and a floor)."""
    mag = np.hypot(ctx.gx, ctx.gy)
    sel = ctx.candidates & np.isfinite(mag)
    if not sel.any():
        return []
    thresh = max(float(np.percentile(mag[sel], cfg.edge_percentile)), cfg.edge_floor)
    hit = sel & (mag > thresh)
    rr, cc = np.nonzero(hit)
    order = np.lexsort((cc, rr, -mag[rr, cc]))
    return [(int(cc[i]) + ctx.origin[0], int(rr[i]) + ctx.origin[1]) for i in order]


def mine_negatives(ctx: GraspContext, cfg: MiningConfig = MiningConfig(), limit: int | None = None, avoid=()):
    """Label-0 samples from tips, stem and steep edges, taken round-robin across the three pools."""
    limit = cfg.per_positive if limit is None else limit
    pools = [(NEG_TIP, tip_pixels(ctx, cfg)), (NEG_STEM, stem_pixels(ctx)), (NEG_EDGE, edge_pixels(ctx, cfg))]
    taken: list[tuple[int, int]] = list(avoid)
    out = []
    cursors = [0, 0, 0]
    gap2 = cfg.min_gap**2
    while len(out) < limit and any(cursors[i] < len(p) for i, (_, p) in enumerate(pools)):
        for i, (prov, pool) in enumerate(pools):
            while cursors[i] < len(pool):
                px = pool[cursors[i]]
                cursors[i] += 1
                if all((px[0] - t[0]) ** 2 + (px[1] - t[1]) ** 2 >= gap2 for t in taken):
                    taken.append(px)
                    out.append(make_sample(ctx, px, prov))
                    break
            if len(out) >= limit:
                break
    return out


# ---------------------------------------------------------------------------
# filtering


@dataclass(frozen=True)
class FilterConfig:
    max_invalid: float = 0.2
    min_mask_coverage: float = 0.1
    min_positive_score: float = 0.3


def filter_samples(samples, cfg: FilterConfig = FilterConfig()):
    """Split samples into ``(kept, rejected)``; rejected entries are ``(sample, reason)``."""
    kept, rejected = [], []
    for s in samples:
        reason = None
        if s.invalid_fraction > cfg.max_invalid:
            reason = "depth completion"
        elif s.mask_coverage < cfg.min_mask_coverage:
            reason = "segmentation quality"
        elif s.label == 1 and s.s_final_center < cfg.min_positive_score:
            reason = "score consistency"
        if reason:
            log.debug("reject %s %s at %s: %s", s.scene_id, s.provenance, s.pixel, reason)
            rejected.append((s, reason))
        else:
            kept.append(s)
    return kept, rejected


# ---------------------------------------------------------------------------
# harvesting a corpus


@dataclass(frozen=True)
class HarvestConfig:
    leaf: LeafSelectConfig = field(default_factory=LeafSelectConfig)
    grasp: GraspConfig = field(default_factory=GraspConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    seed: int = 0


@dataclass
class HarvestStats:
    scenes: int = 0
    positives: int = 0
    skipped: Counter = field(default_factory=Counter)
    rejected: Counter = field(default_factory=Counter)


def harvest_scene(scene: Scene, cfg: HarvestConfig = HarvestConfig(), stats: HarvestStats | None = None):
    """Teacher positive on the selected leaf, its augmentations and its negatives.

    Returns an empty list unless the positive survives filtering *and* enough
    negatives survive to keep the 1 : n_aug : n_neg ratio exact.
    """
    stats = stats if stats is not None else HarvestStats()
    stats.scenes += 1
    try:
        lid, _ = select_leaf(scene, cfg.leaf)
        leaf = LeafModel(scene, lid)
        ctx = GraspContext(scene, leaf, cfg.grasp)
        best = ctx.best()
    except (NoViableLeafError, DegenerateLeafError, NoCandidateError) as exc:
        stats.skipped[type(exc).__name__] += 1
        return []
    pos = make_sample(ctx, best.pixel, POSITIVE)
    kept, rej = filter_samples([pos], cfg.filter)
    for _, why in rej:
        stats.rejected[why] += 1
    if not kept:
        stats.skipped["positive rejected"] += 1
        return []
    n_neg = cfg.mining.per_positive
    negs = mine_negatives(ctx, cfg.mining, limit=4 * n_neg, avoid=[best.pixel])
    negs, rej = filter_samples(negs, cfg.filter)
    for _, why in rej:
        stats.rejected[why] += 1
    if len(negs) < n_neg:
        stats.skipped["too few negatives"] += 1
        return []
    negs = _balanced_pick(negs, n_neg)
    seed = int.from_bytes(hashlib.sha256(f"{cfg.seed}:{scene.scene_id}".encode()).digest()[:8], "little")
    augs = augment(pos, cfg.augment, np.random.default_rng(seed))
    stats.positives += 1
    return [pos, *augs, *negs]


def _balanced_pick(negs, n):
    """Prefer one of each negative kind before repeating a kind (input order preserved)."""
    seen, first, rest = set(), [], []
    for s in negs:
        (first if s.provenance not in seen else rest).append(s)
        seen.add(s.provenance)
    chosen = (first + rest)[:n]
    return sorted(chosen, key=lambda s: negs.index(s))


# ---------------------------------------------------------------------------
# on-disk dataset

SHARD_MAGIC = b"GPSHARD\x00"
SHARD_VERSION = 1
_REC = struct.Struct("<BBHiifBBfffQf")  # prov, label, leaf, u, v, invalid, rot, flip, crop, contrast, bright, seed, sigma
_PATCH_BYTES = len(CHANNELS) * PATCH * PATCH * 4


class DatasetError(ValueError):
    pass


def _encode_shard(samples) -> bytes:
    out = bytearray(SHARD_MAGIC + struct.pack("<II", SHARD_VERSION, len(samples)))
    for s in samples:
        sid = s.scene_id.encode()
        r = s.recipe or AugmentRecipe()
        out += struct.pack("<H", len(sid)) + sid + struct.pack("<H", s.variant)
        out += _REC.pack(
            PROVENANCES.index(s.provenance), s.label, s.leaf_id, s.pixel[0], s.pixel[1], s.invalid_fraction,
            r.rotation_k, int(r.flip), r.crop_scale, r.contrast, r.brightness, r.noise_seed, r.noise_sigma,
        )
        out += struct.pack("<B", s.recipe is not None)
        out += np.ascontiguousarray(s.patch, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def _decode_shard(data: bytes, source: str) -> list[TrainingSample]:
    if len(data) < 16 or data[:8] != SHARD_MAGIC:
        raise DatasetError(f"{source}: not a sample shard")
    if zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        raise DatasetError(f"{source}: checksum failure")
    version, count = struct.unpack_from("<II", data, 8)
    if version != SHARD_VERSION:
        raise DatasetError(f"{source}: shard version {version}, expected {SHARD_VERSION}")
    off, out = 16, []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        sid = data[off : off + n].decode()
        off += n
        (variant,) = struct.unpack_from("<H", data, off)
        off += 2
        prov, label, leaf, u, v, inv, rot, flip, crop, con, bri, seed, sigma = _REC.unpack_from(data, off)
        off += _REC.size
        (has_recipe,) = struct.unpack_from("<B", data, off)
        off += 1
        patch = np.frombuffer(data, dtype="<f4", count=_PATCH_BYTES // 4, offset=off).reshape(len(CHANNELS), PATCH, PATCH)
        off += _PATCH_BYTES
        recipe = AugmentRecipe(rot, crop, con, bri, bool(flip), sigma, seed) if has_recipe else None
        out.append(
            TrainingSample(patch.astype(np.float32), label, PROVENANCES[prov], sid, (u, v), leaf, inv, recipe, variant)
        )
    return out


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


@dataclass
class DatasetManifest:
    counts: dict
    total: int
    shards: list
    recipes: list
    filter_stats: dict
    content_hash: str
    trained_total: int = 0
    retrain: bool = False
    retrain_fraction: float = 0.2
    format_version: int = 1

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        return cls(**json.loads(text))


def _content_hash(shards: list) -> str:
    h = hashlib.sha256()
    for s in shards:
        h.update(s["sha256"].encode())
    return h.hexdigest()


def empty_manifest(retrain_fraction: float = 0.2) -> DatasetManifest:
    return DatasetManifest({p: 0 for p in PROVENANCES}, 0, [], [], {}, _content_hash([]), 0, False, retrain_fraction)


def read_manifest(root) -> DatasetManifest:
    p = Path(root) / "manifest.json"
    if not p.is_file():
        return empty_manifest()
    return DatasetManifest.from_json(p.read_text())


def load_dataset(root) -> list[TrainingSample]:
    root = Path(root)
    man = read_manifest(root)
    samples = []
    for sh in man.shards:
        data = (root / sh["file"]).read_bytes()
        if hashlib.sha256(data).hexdigest() != sh["sha256"]:
            raise DatasetError(f"{root / sh['file']}: content differs from manifest")
        samples.extend(_decode_shard(data, str(root / sh["file"])))
    return samples


def append_experience(root, samples, filter_stats: dict | None = None, retrain_fraction: float | None = None) -> DatasetManifest:
    """Append samples (deduplicated by scene, leaf, pixel, provenance and variant).

    Writes one new shard per source scene and atomically replaces the manifest.
    Sets ``retrain`` once the dataset has grown by more than ``retrain_fraction``
    since the last :func:`mark_trained`.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    man = read_manifest(root)
    if retrain_fraction is not None:
        man.retrain_fraction = retrain_fraction
    existing = {s.key for s in load_dataset(root)} if man.shards else set()
    fresh, seen = [], set()
    for s in samples:
        if s.key in existing or s.key in seen:
            continue
        seen.add(s.key)
        fresh.append(s)
    if not fresh:
        if samples:
            log.warning("append_experience: all %d samples already present; nothing appended", len(samples))
        return man
    by_scene: dict[str, list] = {}
    for s in fresh:
        by_scene.setdefault(s.scene_id, []).append(s)
    seq = len(man.shards)
    for sid in sorted(by_scene):
        data = _encode_shard(by_scene[sid])
        name = f"shard_{seq:06d}_{_safe(sid)}.bin"
        seq += 1
        _atomic_write(root / name, data)
        man.shards.append({"file": name, "scene_id": sid, "count": len(by_scene[sid]), "sha256": hashlib.sha256(data).hexdigest()})
    for s in fresh:
        man.counts[s.provenance] = man.counts.get(s.provenance, 0) + 1
        if s.recipe is not None and s.recipe.recipe_id not in man.recipes:
            man.recipes.append(s.recipe.recipe_id)
    man.total += len(fresh)
    for k, v in (filter_stats or {}).items():
        man.filter_stats[k] = man.filter_stats.get(k, 0) + v
    man.content_hash = _content_hash(man.shards)
    base = man.trained_total
    man.retrain = man.total > 0 if base == 0 else (man.total - base) / base > man.retrain_fraction
    _atomic_write(root / "manifest.json", man.to_json().encode())
    return man


def mark_trained(root) -> DatasetManifest:
    root = Path(root)
    man = read_manifest(root)
    man.trained_total = man.total
    man.retrain = False
    _atomic_write(root / "manifest.json", man.to_json().encode())
    return man


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


def as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.patch for s in samples]).astype(np.float32)
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


# ---------------------------------------------------------------------------
# continual learning on simulated grasp outcomes


def experience_sample(ctx: GraspContext, at, success: bool) -> TrainingSample:
    """A grasp outcome turned into a sample; outcome comes from ground truth on synthetic scenes."""
    return make_sample(ctx, at, EXP_SUCCESS if success else EXP_FAILURE)
