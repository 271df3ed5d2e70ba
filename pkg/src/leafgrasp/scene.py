"""Scene data model, on-disk scene directories and the synthetic canopy generator."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .distance import edt_sq

FORMAT_VERSION = 1


class SceneFormatError(ValueError):
    """A scene directory is missing a file or has malformed contents."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float = 0.08

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not self.baseline > 0:
            raise ValueError(f"baseline must be positive, got {self.baseline}")


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth, row-major ``(height, width)``; non-positive or non-finite means missing."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"depth must be 2D, got shape {self.values.shape}")
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.float32)))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values) & (self.values > 0)


@dataclass(frozen=True, eq=False)
class InstanceMask:
    leaf_id: int
    mask: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mask", _frozen(np.asarray(self.mask, dtype=bool)))
        if not self.mask.any():
            raise ValueError(f"leaf {self.leaf_id}: mask has no set pixels")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"leaf {self.leaf_id}: confidence {self.confidence} outside [0, 1]")

    @cached_property
    def bbox(self) -> tuple[int, int, int, int]:
        """Half-open bounding box ``(u0, v0, u1, v1)`` of the mask."""
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask[rows[0] : rows[-1] + 1].any(axis=0))
        return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


@dataclass(frozen=True, eq=False)
class InstanceMaskSet:
    width: int
    height: int
    masks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        ids = [m.leaf_id for m in self.masks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate leaf ids: {ids}")
        for m in self.masks:
            if m.mask.shape != (self.height, self.width):
                raise ValueError(
                    f"leaf {m.leaf_id}: mask shape {m.mask.shape} != scene {(self.height, self.width)}"
                )

    def __iter__(self):
        return iter(self.masks)

    def __len__(self):
        return len(self.masks)

    @property
    def ids(self) -> list[int]:
        return [m.leaf_id for m in self.masks]

    def get(self, leaf_id: int) -> InstanceMask:
        for m in self.masks:
            if m.leaf_id == leaf_id:
                return m
        raise KeyError(f"no leaf with id {leaf_id}")


@dataclass(frozen=True, eq=False)
class LeafTruth:
    """Generator-side annotation of one leaf (synthetic scenes only).

    ``region`` is the set of pixels where a grasp would succeed; ``graspable``
    is the leaf-level verdict (reachable, unobstructed, not cut by the border).
    """

    grasp: tuple[int, int]
    region: np.ndarray
    midrib: tuple[tuple[float, float], tuple[float, float]]
    graspable: bool
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "region", _frozen(np.asarray(self.region, dtype=bool)))
        object.__setattr__(self, "grasp", (int(self.grasp[0]), int(self.grasp[1])))

    @property
    def hard(self) -> bool:
        return bool(self.tags.get("hard", False))


@dataclass(frozen=True, eq=False)
class Scene:
    intrinsics: CameraIntrinsics
    depth: DepthMap
    instances: InstanceMaskSet
    stems: dict = field(default_factory=dict)
    truth: dict = field(default_factory=dict)
    scene_id: str = "scene"

    def __post_init__(self):
        if (self.depth.height, self.depth.width) != (self.instances.height, self.instances.width):
            raise ValueError(
                f"depth {self.depth.width}x{self.depth.height} != masks "
                f"{self.instances.width}x{self.instances.height}"
            )
        w, h = self.width, self.height
        if not (0 <= self.intrinsics.cx < w and 0 <= self.intrinsics.cy < h):
            raise ValueError(f"principal point ({self.intrinsics.cx}, {self.intrinsics.cy}) outside image")
        stems = {int(k): _frozen(np.asarray(v, dtype=bool)) for k, v in self.stems.items()}
        for k, s in stems.items():
            if s.shape != (h, w):
                raise ValueError(f"stem {k}: shape {s.shape} != scene {(h, w)}")
        object.__setattr__(self, "stems", stems)
        object.__setattr__(self, "truth", {int(k): v for k, v in self.truth.items()})

    @property
    def width(self) -> int:
        return self.depth.width

    @property
    def height(self) -> int:
        return self.depth.height

    @property
    def leaf_ids(self) -> list[int]:
        return self.instances.ids

    def mask(self, leaf_id: int) -> np.ndarray:
        return self.instances.get(leaf_id).mask

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        if (
            self.scene_id != other.scene_id
            or self.intrinsics != other.intrinsics
            or self.depth.values.tobytes() != other.depth.values.tobytes()
            or self.depth.values.shape != other.depth.values.shape
            or len(self.instances) != len(other.instances)
        ):
            return False
        for a, b in zip(self.instances, other.instances):
            if a.leaf_id != b.leaf_id or a.confidence != b.confidence or not np.array_equal(a.mask, b.mask):
                return False
        if self.stems.keys() != other.stems.keys() or self.truth.keys() != other.truth.keys():
            return False
        if any(not np.array_equal(self.stems[k], other.stems[k]) for k in self.stems):
            return False
        for k, t in self.truth.items():
            o = other.truth[k]
            if (t.grasp, t.midrib, t.graspable, t.tags) != (o.grasp, o.midrib, o.graspable, o.tags):
                return False
            if not np.array_equal(t.region, o.region):
                return False
        return True

    __hash__ = None


# ---------------------------------------------------------------------------
# file formats


def write_pfm(path, values: np.ndarray) -> None:
    """Grayscale little-endian PFM; rows stored bottom-to-top as the format requires."""
    values = np.asarray(values, dtype="<f4")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(values[::-1]).tobytes())


def _read_header_tokens(data: bytes, n: int, path):
    tokens, pos = [], 0
    while len(tokens) < n:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise SceneFormatError(path, "truncated header")
        tokens.append(data[start:pos].decode("ascii", errors="replace"))
    return tokens, pos + 1


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = _read_header_tokens(data, 4, path)
    if tokens[0] != "Pf":
        raise SceneFormatError(path, f"expected grayscale PFM 'Pf', got {tokens[0]!r}")
    try:
        w, h, scale = int(tokens[1]), int(tokens[2]), float(tokens[3])
    except ValueError as exc:
        raise SceneFormatError(path, f"malformed header: {exc}") from None
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * 4
    if len(data) - pos != need:
        raise SceneFormatError(path, f"expected {need} bytes of pixel data, found {len(data) - pos}")
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return arr[::-1].astype(np.float32)


def write_pgm(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write((mask.astype(np.uint8) * 255).tobytes())


def write_pgm_gray(path, image: np.ndarray) -> None:
    """8-bit grayscale PGM from an array already scaled to 0..255."""
    img = np.clip(np.asarray(image), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = _read_header_tokens(data, 4, path)
    if tokens[0] != "P5":
        raise SceneFormatError(path, f"expected binary PGM 'P5', got {tokens[0]!r}")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise SceneFormatError(path, f"malformed header: {exc}") from None
    if maxval != 255:
        raise SceneFormatError(path, f"expected maxval 255, got {maxval}")
    if len(data) - pos != w * h:
        raise SceneFormatError(path, f"expected {w * h} bytes of pixel data, found {len(data) - pos}")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w) > 127


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.clip(np.asarray(rgb), 0, 255).astype(np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def save_scene(scene: Scene, path) -> None:
    if len(scene.instances) == 0:
        raise ValueError("scene must contain at least one leaf")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    leaves = []
    for inst in scene.instances:
        lid = inst.leaf_id
        entry = {"id": lid, "confidence": inst.confidence, "mask": f"mask_{lid}.pgm"}
        write_pgm(path / entry["mask"], inst.mask)
        if lid in scene.stems:
            entry["stem"] = f"stem_{lid}.pgm"
            write_pgm(path / entry["stem"], scene.stems[lid])
        if lid in scene.truth:
            t = scene.truth[lid]
            entry["ground_truth"] = {
                "grasp": list(t.grasp),
                "region": f"region_{lid}.pgm",
                "midrib": [list(t.midrib[0]), list(t.midrib[1])],
                "graspable": t.graspable,
                "tags": t.tags,
            }
            write_pgm(path / f"region_{lid}.pgm", t.region)
        leaves.append(entry)
    write_pfm(path / "depth.pfm", scene.depth.values)
    manifest = {
        "format_version": FORMAT_VERSION,
        "scene_id": scene.scene_id,
        "width": scene.width,
        "height": scene.height,
        "intrinsics": asdict(scene.intrinsics),
        "depth": {"file": "depth.pfm", "kind": "depth"},
        "leaves": leaves,
    }
    tmp = path / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path / "manifest.json")


def _load_mask(path, name, shape):
    p = path / name
    if not p.is_file():
        raise SceneFormatError(p, "missing file")
    m = read_pgm(p)
    if m.shape != shape:
        raise SceneFormatError(p, f"dimension mismatch: {m.shape[1]}x{m.shape[0]} vs scene {shape[1]}x{shape[0]}")
    return m


def load_scene(path) -> Scene:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise SceneFormatError(mpath, "missing file")
    try:
        man = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(mpath, f"malformed JSON: {exc}") from None
    if man.get("format_version") != FORMAT_VERSION:
        raise SceneFormatError(mpath, f"unsupported format_version {man.get('format_version')!r}")
    try:
        w, h = int(man["width"]), int(man["height"])
        k = CameraIntrinsics(**man["intrinsics"])
        depth_info = man["depth"]
        leaves = man["leaves"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(mpath, f"malformed manifest: {exc}") from None
    dpath = path / depth_info.get("file", "depth.pfm")
    if not dpath.is_file():
        raise SceneFormatError(dpath, "missing file")
    raw = read_pfm(dpath)
    if raw.shape != (h, w):
        raise SceneFormatError(dpath, f"dimension mismatch: {raw.shape[1]}x{raw.shape[0]} vs manifest {w}x{h}")
    if depth_info.get("kind", "depth") == "disparity":
        from .geometry import disparity_to_depth

        with np.errstate(divide="ignore", invalid="ignore"):
            raw = np.where(raw > 0, disparity_to_depth(raw, k.fx, k.baseline), 0.0).astype(np.float32)
    masks, stems, truth = [], {}, {}
    for entry in leaves:
        lid = int(entry["id"])
        m = _load_mask(path, entry.get("mask", f"mask_{lid}.pgm"), (h, w))
        try:
            masks.append(InstanceMask(lid, m, float(entry.get("confidence", 1.0))))
        except ValueError as exc:
            raise SceneFormatError(path / entry.get("mask", f"mask_{lid}.pgm"), str(exc)) from None
        if entry.get("stem"):
            stems[lid] = _load_mask(path, entry["stem"], (h, w))
        gt = entry.get("ground_truth")
        if gt:
            truth[lid] = LeafTruth(
                grasp=tuple(gt["grasp"]),
                region=_load_mask(path, gt["region"], (h, w)),
                midrib=(tuple(gt["midrib"][0]), tuple(gt["midrib"][1])),
                graspable=bool(gt["graspable"]),
                tags=gt.get("tags", {}),
            )
    if not masks:
        raise SceneFormatError(mpath, "scene must contain at least one leaf")
    try:
        return Scene(
            intrinsics=k,
            depth=DepthMap(raw),
            instances=InstanceMaskSet(w, h, masks),
            stems=stems,
            truth=truth,
            scene_id=str(man.get("scene_id", path.name)),
        )
    except ValueError as exc:
        raise SceneFormatError(path, str(exc)) from None


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class SynthesisParams:
    """Procedural canopy: elliptical leaves, each a quadratic bump (domed or cupped) over a flat base.

    Sizes are in pixels, depths in metres.  ``rotation`` of a leaf is the angle
    of its base-to-tip axis from image-up.
    """

    width: int = 640
    height: int = 480
    focal: float = 444.0
    baseline: float = 0.08
    leaf_count: tuple = (3, 7)
    leaf_size: tuple = (30.0, 70.0)  # semi-major axis, px
    eccentricity: tuple = (0.5, 0.95)
    overlap_prob: float = 0.4
    canopy_depth: float = 0.40
    depth_jitter: float = 0.05
    background_offset: float = 0.25
    curvature: float = 0.006  # bump height, m
    stem_width: int = 4
    noise_sigma: float = 0.0
    boundary_dropout: int = 2  # px of missing depth on the far side of depth edges
    # ground-truth physics
    edge_clear_mm: float = 5.0
    stem_clear_mm: float = 12.0
    midrib_band: float = 0.5  # fraction of the local half-width
    max_approach_deg: float = 25.0
    finger_clear_mm: float = 12.0
    reach_depth: float = 0.43
    max_hidden: float = 0.3
    seed: int = 0

    def validate(self):
        for name in ("leaf_count", "leaf_size", "eccentricity"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range {lo}..{hi}")
        if self.leaf_count[0] < 1:
            raise ValueError("leaf_count must allow at least one leaf")
        if not (0 <= self.eccentricity[0] and self.eccentricity[1] < 1):
            raise ValueError("eccentricity must lie in [0, 1)")
        if 2 * self.leaf_size[0] > min(self.width, self.height):
            raise ValueError(
                f"leaf size {self.leaf_size[0]} px cannot fit a {self.width}x{self.height} image"
            )
        if not (self.focal > 0 and self.canopy_depth - self.depth_jitter - self.curvature > 0):
            raise ValueError("focal and canopy depth must be positive")
        if not 0 <= self.overlap_prob <= 1:
            raise ValueError("overlap_prob must be in [0, 1]")


@dataclass
class _Leaf:
    center: np.ndarray
    a: float
    b: float
    angle: float  # base-to-tip direction, radians from image-up, clockwise
    z0: float
    ecc: float
    bulge: float = 1.0  # +1 domed toward the camera, -1 cupped

    @property
    def axis(self) -> np.ndarray:
        return np.array([math.sin(self.angle), -math.cos(self.angle)])

    def local(self, uu, vv):
        du, dv = uu - self.center[0], vv - self.center[1]
        ax = self.axis
        t = du * ax[0] + dv * ax[1]
        s = -du * ax[1] + dv * ax[0]
        return t, s

    def surface(self, uu, vv, curvature):
        t, s = self.local(uu, vv)
        r2 = (t / self.a) ** 2 + (s / self.b) ** 2
        return r2, self.z0 - self.bulge * curvature * (1.0 - r2)


def _place_leaves(p: SynthesisParams, rng: np.random.Generator) -> list[_Leaf]:
    n = int(rng.integers(p.leaf_count[0], p.leaf_count[1] + 1))
    leaves: list[_Leaf] = []
    for _ in range(n):
        a = rng.uniform(*p.leaf_size)
        ecc = rng.uniform(*p.eccentricity)
        b = a * math.sqrt(1 - ecc * ecc)
        angle = math.remainder(rng.normal(0.0, math.radians(30.0)), 2 * math.pi)
        if leaves and rng.random() < p.overlap_prob:
            host = leaves[int(rng.integers(len(leaves)))]
            phi = rng.uniform(0, 2 * math.pi)
            reach = (host.b + b) * rng.uniform(0.5, 1.0)
            center = host.center + reach * np.array([math.cos(phi), math.sin(phi)])
        else:
            center = np.array([rng.uniform(0, p.width - 1), rng.uniform(0, p.height - 1)])
        z0 = p.canopy_depth + rng.uniform(-p.depth_jitter, p.depth_jitter)
        bulge = 1.0 if rng.random() < 0.5 else -1.0
        leaves.append(_Leaf(center, a, b, angle, z0, ecc, bulge))
    return leaves


def _stereo_occlusion(depth: np.ndarray, focal: float, baseline: float) -> np.ndarray:
    """Pixels of the left view with no match in the right view (half-occlusion)."""
    disp = focal * baseline / depth
    right_col = np.arange(depth.shape[1])[None, :] - disp
    # minimum right-view column over everything strictly to the right
    suffix = np.minimum.accumulate(right_col[:, ::-1], axis=1)[:, ::-1]
    shifted = np.concatenate([suffix[:, 1:], np.full((depth.shape[0], 1), np.inf)], axis=1)
    return shifted < right_col - 0.25


def _window(leaf: _Leaf, margin: float, w: int, h: int):
    r = 1.3 * leaf.a + margin
    u0, u1 = max(0, int(leaf.center[0] - r)), min(w, int(leaf.center[0] + r) + 2)
    v0, v1 = max(0, int(leaf.center[1] - r)), min(h, int(leaf.center[1] + r) + 2)
    return slice(v0, max(v0, v1)), slice(u0, max(u0, u1))


def synthesize_scene(params: SynthesisParams, scene_id: Optional[str] = None) -> Scene:
    """Render a deterministic synthetic canopy with per-leaf ground truth."""
    p = params
    p.validate()
    rng = np.random.default_rng(p.seed)
    h, w = p.height, p.width
    k = CameraIntrinsics(p.focal, p.focal, (w - 1) / 2.0, (h - 1) / 2.0, p.baseline)
    leaves = _place_leaves(p, rng)
    confidences = rng.uniform(0.85, 0.99, size=len(leaves))
    noise = rng.normal(0.0, p.noise_sigma, size=(h, w)) if p.noise_sigma > 0 else None
    mm_per_px = p.canopy_depth / p.focal * 1000.0
    clear_px = p.finger_clear_mm / mm_per_px

    background = p.canopy_depth + p.background_offset
    zbuf = np.full((h, w), background)
    owner = np.zeros((h, w), dtype=np.int32)
    in_image_area = {}
    for i, leaf in enumerate(leaves, start=1):
        win = _window(leaf, 2, w, h)
        vv, uu = np.mgrid[win].astype(np.float64)
        r2, z = leaf.surface(uu, vv, p.curvature)
        inside = r2 <= 1.0
        in_image_area[i] = int(inside.sum())
        zb, ow = zbuf[win], owner[win]
        closer = inside & (z < zb)
        zb[closer] = z[closer]
        ow[closer] = i

    depth = zbuf.copy()
    if noise is not None:
        depth += noise
    missing = _stereo_occlusion(zbuf, p.focal, p.baseline)
    if p.boundary_dropout > 0:
        # matcher failure on the far side of a depth edge
        for i, leaf in enumerate(leaves, start=1):
            win = _window(leaf, p.boundary_dropout + 2, w, h)
            own = owner[win] == i
            if not own.any():
                continue
            near = edt_sq(own) <= p.boundary_dropout**2
            missing[win] |= near & ~own & (zbuf[win] > leaf.z0 - p.curvature - 1e-9)
    depth = np.where(missing, 0.0, depth).astype(np.float32)

    masks, stems, truth = [], {}, {}
    for i, leaf in enumerate(leaves, start=1):
        vis_full = owner == i
        if vis_full.sum() < 30:
            continue
        win = _window(leaf, 2, w, h)
        v0, u0 = win[0].start, win[1].start
        vv, uu = np.mgrid[win].astype(np.float64)
        vis = vis_full[win]
        dwin = depth[win]
        valid = vis & (dwin > 0)
        interior = np.sqrt(edt_sq(~np.pad(vis, 1))[1:-1, 1:-1]) - 0.5
        ax = leaf.axis
        base = leaf.center - leaf.a * ax
        tip = leaf.center + leaf.a * ax
        t, s = leaf.local(uu, vv)
        stem = (np.abs(s) <= p.stem_width / 2.0) & (t >= -leaf.a * 1.3) & (t <= -leaf.a * 0.7)
        stem_dist = np.sqrt(edt_sq(stem)) if stem.any() else np.full(stem.shape, np.inf)
        zsafe = np.where(valid, dwin, leaf.z0)
        px_per_mm = p.focal / (zsafe * 1000.0)
        # analytic slope of the bump; dz/dt, dz/ds in metres per pixel
        dz_dt = 2 * leaf.bulge * p.curvature * t / leaf.a**2
        dz_ds = 2 * leaf.bulge * p.curvature * s / leaf.b**2
        metric = zsafe / p.focal  # metres per pixel
        gu = dz_dt * ax[0] - dz_ds * ax[1]
        gv = dz_dt * ax[1] + dz_ds * ax[0]
        slope = np.hypot(gu, gv) / metric
        nx, ny = -gu / metric, -gv / metric
        rx, ry = (uu - k.cx) / k.fx, (vv - k.cy) / k.fy
        cosang = np.abs(nx * rx + ny * ry + 1.0) / (np.sqrt(nx**2 + ny**2 + 1.0) * np.sqrt(rx**2 + ry**2 + 1.0))
        approach_ok = cosang >= math.cos(math.radians(p.max_approach_deg))
        half_width = leaf.b * np.sqrt(np.clip(1 - (t / leaf.a) ** 2, 0, 1))
        midrib_ok = np.abs(s) <= p.midrib_band * half_width
        region = (
            valid
            & (interior >= np.maximum(5.0, p.edge_clear_mm * px_per_mm))
            & (stem_dist >= p.stem_clear_mm * px_per_mm)
            & midrib_ok
            & approach_ok
        )
        cand = valid & (interior >= 5.0) & (stem_dist >= p.stem_clear_mm * px_per_mm)
        if not cand.any():
            cand = valid & (interior >= 5.0)
        if not cand.any():
            continue
        # ideal grasp: flattest eligible pixel, then nearest the midrib, then lowest (u, v)
        cv, cu = np.nonzero(cand)
        order = np.lexsort((cv, cu, np.round(np.abs(s[cv, cu]), 6), np.round(slope[cv, cu], 9)))
        gu_px, gv_px = int(cu[order[0]]) + u0, int(cv[order[0]]) + v0

        r = int(math.ceil(clear_px))
        nb = owner[max(0, gv_px - r) : gv_px + r + 1, max(0, gu_px - r) : gu_px + r + 1]
        oy, ox = np.nonzero((nb > 0) & (nb != i))
        oy = oy + max(0, gv_px - r) - gv_px
        ox = ox + max(0, gu_px - r) - gu_px
        crowded = bool(len(oy)) and float(np.sqrt((ox**2 + oy**2).min())) < clear_px
        hidden = 1.0 - vis.sum() / max(in_image_area[i], 1)
        touches = bool(vis_full[0].any() or vis_full[-1].any() or vis_full[:, 0].any() or vis_full[:, -1].any())
        rot = abs(math.degrees(leaf.angle))
        tags = {
            "occlusion": round(float(hidden), 6),
            "eccentricity": round(float(leaf.ecc), 6),
            "rotation_deg": round(float(rot), 6),
            "hard": bool(hidden > 0.2 or leaf.ecc > 0.9 or rot > 45.0),
        }
        graspable = bool(
            region.any() and not touches and not crowded and hidden <= p.max_hidden and leaf.z0 <= p.reach_depth
        )
        region_full = np.zeros((h, w), dtype=bool)
        region_full[win] = region
        stem_full = np.zeros((h, w), dtype=bool)
        stem_full[win] = stem
        masks.append(InstanceMask(i, vis_full, round(float(confidences[i - 1]), 4)))
        stems[i] = stem_full
        truth[i] = LeafTruth(
            grasp=(gu_px, gv_px),
            region=region_full,
            midrib=(
                (round(float(base[0]), 4), round(float(base[1]), 4)),
                (round(float(tip[0]), 4), round(float(tip[1]), 4)),
            ),
            graspable=graspable,
            tags=tags,
        )
    if not masks:
        raise ValueError(f"seed {p.seed}: no leaf survived visibility filtering")
    return Scene(
        intrinsics=k,
        depth=DepthMap(depth),
        instances=InstanceMaskSet(w, h, masks),
        stems=stems,
        truth=truth,
        scene_id=scene_id or f"synth_{p.seed}",
    )
