"""Pinhole back-projection, per-leaf point clouds, normals and depth gradients."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .scene import CameraIntrinsics, Scene

NORMAL_WINDOW = 5
MIN_FIT_POINTS = 6


class DegenerateLeafError(ValueError):
    """Leaf has no pixel with valid depth."""


class GradientUnavailable(ValueError):
    pass


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Half-open bounding box ``(u0, v0, u1, v1)`` of the set pixels."""
    rows = np.flatnonzero(mask.any(axis=1))
    if len(rows) == 0:
        raise ValueError("empty mask has no bounding box")
    cols = np.flatnonzero(mask[rows[0] : rows[-1] + 1].any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def disparity_to_depth(disparity, focal: float, baseline: float):
    """Z = f * b / d."""
    return focal * baseline / np.asarray(disparity, dtype=np.float64)


def back_project(u: float, v: float, depth: float, k: CameraIntrinsics) -> tuple[float, float, float]:
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    return (u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, float(depth)


def project(x: float, y: float, z: float, k: CameraIntrinsics) -> tuple[float, float, float]:
    """Inverse of :func:`back_project`: returns (u, v, depth)."""
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy, z


def back_project_pixels(u: np.ndarray, v: np.ndarray, depth: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    z = np.asarray(depth, dtype=np.float64)
    return np.stack([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z], axis=-1)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3) metres
    pixels: np.ndarray  # (N, 2) integer (u, v)

    def __len__(self):
        return len(self.points)


class LeafModel:
    """Geometry of one segmented leaf.

    Normals and surface area need a windowed plane fit, so they are computed on
    first access; selection only touches the cheap fields.
    """

    def __init__(self, scene: Scene, leaf_id: int):
        inst = scene.instances.get(leaf_id)
        self.leaf_id = leaf_id
        self.scene = scene
        self.mask = inst.mask
        self.confidence = inst.confidence
        k = scene.intrinsics
        self.bbox = inst.bbox  # u0, v0, u1, v1
        u0, v0, u1, v1 = self.bbox
        m = self.mask[v0:v1, u0:u1]
        z = scene.depth.values[v0:v1, u0:u1]
        uu = np.arange(u0, u1, dtype=np.float64)
        vv = np.arange(v0, v1, dtype=np.float64)
        self.n_pixels = n = int(m.sum())
        self.centroid_uv = (float(m.sum(axis=0) @ uu) / n, float(m.sum(axis=1) @ vv) / n)
        ok = m & np.isfinite(z) & (z > 0)
        n_ok = int(ok.sum())
        self.occlusion_fraction = 1.0 - n_ok / n
        self.n_valid = n_ok
        if n_ok == 0:
            raise DegenerateLeafError(f"leaf {leaf_id} has no valid depth")
        # moments of the back-projected points, evaluated on the bounding-box grid
        zz = np.where(ok, z, 0.0).astype(np.float64)
        a = (uu - k.cx) / k.fx
        b = (vv - k.cy) / k.fy
        self.centroid = (
            float((zz.sum(axis=0) @ a) / n_ok), float((zz.sum(axis=1) @ b) / n_ok), float(zz.sum() / n_ok)
        )
        ray = np.sqrt(a[None, :] ** 2 + b[:, None] ** 2 + 1.0)
        self.d_mean = float((zz * ray).sum() / n_ok)

    @cached_property
    def cloud(self) -> PointCloud:
        u0, v0, u1, v1 = self.bbox
        vs, us = np.nonzero(self.mask[v0:v1, u0:u1])
        vs, us = vs + v0, us + u0
        z = self.scene.depth.values[vs, us]
        ok = np.isfinite(z) & (z > 0)
        us, vs = us[ok], vs[ok]
        pts = back_project_pixels(us.astype(np.float64), vs.astype(np.float64), z[ok], self.scene.intrinsics)
        return PointCloud(pts, np.stack([us, vs], axis=1))

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.scene.intrinsics

    @cached_property
    def _normal_fit(self):
        return fit_normals(self.scene, self.mask, self.cloud)

    @property
    def normals(self) -> np.ndarray:
        """Unit normals (N, 3) aligned with ``cloud``; NaN rows where the fit had < 6 points."""
        return self._normal_fit

    @cached_property
    def surface_area(self) -> float:
        """Sum of per-pixel surface patches: Z^2 cos(ray) / (fx fy cos(normal, ray))."""
        k = self.intrinsics
        pts = self.cloud.points
        n = self.normals
        ray = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        cos_ray = ray[:, 2]
        cos_n = np.abs((n * ray).sum(axis=1))
        cos_n = np.where(np.isfinite(cos_n), np.maximum(cos_n, 0.2), cos_ray)
        return float((pts[:, 2] ** 2 * cos_ray / (k.fx * k.fy * cos_n)).sum())


def build_leaf_model(scene: Scene, leaf_id: int) -> LeafModel:
    return LeafModel(scene, leaf_id)


def fit_normals(scene: Scene, mask: np.ndarray, cloud: PointCloud, window: int = NORMAL_WINDOW) -> np.ndarray:
    """Least-squares plane normal over each pixel's window of valid in-mask neighbours.

    The sign is fixed so every normal has a non-negative Z component.
    """
    k = scene.intrinsics
    r = window // 2
    u0, v0 = cloud.pixels.min(axis=0) - r
    u1, v1 = cloud.pixels.max(axis=0) + r + 1
    hh, ww = v1 - v0, u1 - u0
    xyz = np.zeros((hh, ww, 3))
    ok = np.zeros((hh, ww), dtype=bool)
    lu, lv = cloud.pixels[:, 0] - u0, cloud.pixels[:, 1] - v0
    xyz[lv, lu] = cloud.points
    ok[lv, lu] = True
    w = ok.astype(np.float64)

    def box(a):
        return sliding_window_view(a, (window, window), axis=(0, 1)).sum(axis=(-2, -1))

    # sums over each window, evaluated only at the leaf's own pixels
    n = box(w)[lv - r, lu - r]
    s = box(xyz * w[..., None])[lv - r, lu - r]
    outer = xyz[..., :, None] * xyz[..., None, :] * w[..., None, None]
    ss = box(outer)[lv - r, lu - r]
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s / n[:, None]
        cov = ss / n[:, None, None] - mean[:, :, None] * mean[:, None, :]
    enough = n >= MIN_FIT_POINTS
    normals = np.full((len(n), 3), np.nan)
    if enough.any():
        _, vecs = np.linalg.eigh(cov[enough])
        nv = vecs[:, :, 0]
        nv[nv[:, 2] < 0] *= -1
        normals[enough] = nv / np.linalg.norm(nv, axis=1, keepdims=True)
    return normals


def _usable(depth: np.ndarray, mask, u: int, v: int) -> bool:
    h, w = depth.shape
    if not (0 <= u < w and 0 <= v < h):
        return False
    d = depth[v, u]
    if not (np.isfinite(d) and d > 0):
        return False
    return mask is None or bool(mask[v, u])


def depth_gradients(depth, at: tuple[int, int], mask=None) -> tuple[float, float, bool]:
    """Central-difference depth gradient (metres per pixel) at ``at = (u, v)``.

    Falls back to a one-sided difference when a neighbour is missing depth or
    lies outside ``mask``; the third return value flags that fallback.
    """
    values = depth.values if hasattr(depth, "values") else np.asarray(depth)
    u, v = at
    if not _usable(values, mask, u, v):
        raise GradientUnavailable(f"no usable depth at ({u}, {v})")
    center = float(values[v, u])
    grads = []
    one_sided = False
    for du, dv in ((1, 0), (0, 1)):
        fwd = _usable(values, mask, u + du, v + dv)
        bwd = _usable(values, mask, u - du, v - dv)
        if fwd and bwd:
            g = (float(values[v + dv, u + du]) - float(values[v - dv, u - du])) / 2.0
        elif fwd:
            g = float(values[v + dv, u + du]) - center
            one_sided = True
        elif bwd:
            g = center - float(values[v - dv, u - du])
            one_sided = True
        else:
            raise GradientUnavailable(f"no usable neighbour along {'x' if du else 'y'} at ({u}, {v})")
        grads.append(g)
    return grads[0], grads[1], one_sided


def gradient_maps(values: np.ndarray, usable: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`depth_gradients` over a crop; NaN where unavailable.

    ``usable`` marks pixels with valid depth inside the region of interest.
    Pixels on the crop border see only their in-crop neighbours.
    """
    d = np.where(usable, values.astype(np.float64), 0.0)
    pad_d = np.pad(d, 1)
    pad_u = np.pad(usable, 1)

    def axis_grad(fwd_sl, bwd_sl):
        fwd_ok, bwd_ok = pad_u[fwd_sl], pad_u[bwd_sl]
        fwd, bwd = pad_d[fwd_sl], pad_d[bwd_sl]
        g = np.full(d.shape, np.nan)
        both = fwd_ok & bwd_ok
        g[both] = (fwd[both] - bwd[both]) / 2.0
        only_f = fwd_ok & ~bwd_ok
        g[only_f] = fwd[only_f] - d[only_f]
        only_b = bwd_ok & ~fwd_ok
        g[only_b] = d[only_b] - bwd[only_b]
        return g

    gx = axis_grad((slice(1, -1), slice(2, None)), (slice(1, -1), slice(0, -2)))
    gy = axis_grad((slice(2, None), slice(1, -1)), (slice(0, -2), slice(1, -1)))
    gx[~usable] = np.nan
    gy[~usable] = np.nan
    return gx, gy
