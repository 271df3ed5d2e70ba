"""Exact Euclidean distance transforms, signed distance fields and disk morphology.

Distances are measured between pixel centres.  The transform is the
Felzenszwalb-Huttenlocher lower-envelope algorithm: one linear scan per column
followed by a parabola envelope per row, both on squared distances, so the
result is exact (integer squared distances) rather than a chamfer estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

INF = np.inf


_BIG = 1 << 20  # larger than any image side; BIG**2 marks "no feature"


@numba.njit(cache=True)
def _edt_sq_kernel(features, r0, r1):
    h, w = features.shape
    # column pass: 1D distance to the nearest feature in the same column,
    # swept row by row so memory is touched in storage order
    g = np.empty((h, w), dtype=np.int64)
    for x in range(w):
        g[0, x] = 0 if features[0, x] else _BIG
    for y in range(1, h):
        for x in range(w):
            g[y, x] = 0 if features[y, x] else min(g[y - 1, x] + 1, _BIG)
    for y in range(h - 2, -1, -1):
        for x in range(w):
            t = g[y + 1, x] + 1
            if t < g[y, x]:
                g[y, x] = t

    # row pass (rows r0..r1 only): lower envelope of parabolas (x - i)^2 + g(i)^2
    # in exact integer arithmetic
    out = np.empty((r1 - r0, w), dtype=np.float64)
    s = np.empty(w, dtype=np.int64)  # envelope parabola apexes
    t = np.empty(w, dtype=np.int64)  # first x each one owns
    f = np.empty(w, dtype=np.int64)
    lim = _BIG * _BIG
    for y in range(r0, r1):
        for x in range(w):
            f[x] = g[y, x] * g[y, x]
        q = 0
        s[0] = 0
        t[0] = 0
        for u in range(1, w):
            while q >= 0 and (t[q] - s[q]) * (t[q] - s[q]) + f[s[q]] > (t[q] - u) * (t[q] - u) + f[u]:
                q -= 1
            if q < 0:
                q = 0
                s[0] = u
            else:
                i = s[q]
                sep = 1 + (u * u - i * i + f[u] - f[i]) // (2 * (u - i))
                if sep < w:
                    q += 1
                    s[q] = u
                    t[q] = sep
        for u in range(w - 1, -1, -1):
            d = (u - s[q]) * (u - s[q]) + f[s[q]]
            out[y - r0, u] = d if d < lim else np.inf
            if u == t[q]:
                q -= 1
    return out


def edt_sq(features: np.ndarray, rows: tuple[int, int] | None = None) -> np.ndarray:
    """Squared Euclidean distance from every pixel to the nearest ``True`` pixel.

    Pixels with no feature anywhere in the image get ``inf``.  ``rows``
    restricts the output to a half-open row range (features everywhere still count).
    """
    features = np.ascontiguousarray(features, dtype=np.bool_)
    if features.ndim != 2:
        raise ValueError(f"expected a 2D mask, got shape {features.shape}")
    r0, r1 = (0, features.shape[0]) if rows is None else rows
    if not 0 <= r0 <= r1 <= features.shape[0]:
        raise ValueError(f"row range {rows} outside 0..{features.shape[0]}")
    if features.size == 0 or r0 == r1:
        return np.zeros((r1 - r0, features.shape[1]))
    return _edt_sq_kernel(features, r0, r1)


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Per-pixel distances in pixels.

    ``origin`` is the image coordinate ``(u0, v0)`` of ``values[0, 0]`` so
    fields computed on a crop can still be addressed in scene coordinates.
    Signed fields are negative inside occupied regions and positive in free
    space; the region boundary sits half-way between pixel centres, so the
    pixels on either side of it read +-0.5.
    """

    values: np.ndarray
    signed: bool = False
    degenerate: bool = False
    origin: tuple[int, int] = (0, 0)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def at(self, u: int, v: int) -> float:
        return float(self.values[v - self.origin[1], u - self.origin[0]])


def sentinel_for(shape) -> float:
    return float(max(shape))


def distance_transform(mask: np.ndarray) -> DistanceField:
    """Unsigned distance from each set pixel to the nearest unset pixel.

    Unset pixels read 0.  An all-set or all-unset mask has no boundary; the
    whole field is filled with the sentinel ``max(H, W)`` and flagged.
    """
    mask = np.asarray(mask, dtype=bool)
    n_set = int(mask.sum())
    if n_set == 0 or n_set == mask.size:
        return DistanceField(np.full(mask.shape, sentinel_for(mask.shape)), degenerate=True)
    d = np.sqrt(edt_sq(~mask))
    d[~mask] = 0.0
    return DistanceField(d)


def signed_distance_field(occupancy: np.ndarray, origin: tuple[int, int] = (0, 0), window=None) -> DistanceField:
    """Signed distance to the occupancy boundary (negative inside).

    ``window = (c0, r0, c1, r1)`` (array coordinates, half-open) returns only
    that part of the field, with identical values: the whole occupancy array
    still acts as the source of boundary pixels.
    """
    occ = np.asarray(occupancy, dtype=bool)
    h, w = occ.shape
    c0, r0, c1, r1 = (0, 0, w, h) if window is None else window
    if not (0 <= c0 <= c1 <= w and 0 <= r0 <= r1 <= h):
        raise ValueError(f"window {window} outside a {w}x{h} field")
    out_origin = (origin[0] + c0, origin[1] + r0)
    n_occ = int(occ.sum())
    if n_occ == 0 or n_occ == occ.size:
        sign = -1.0 if n_occ else 1.0
        return DistanceField(
            np.full((r1 - r0, c1 - c0), sign * sentinel_for(occ.shape)), signed=True, degenerate=True, origin=out_origin
        )
    values = np.sqrt(edt_sq(occ, (r0, r1))[:, c0:c1]) - 0.5
    # Interior distances only need the occupied bounding box plus a one-pixel
    # ring: that ring is free, and it is at least as close as any free pixel
    # beyond it along the axis perpendicular to the box side.
    rows = np.flatnonzero(occ.any(axis=1))
    cols = np.flatnonzero(occ[rows[0] : rows[-1] + 1].any(axis=0))
    br0, br1 = max(rows[0] - 1, r0), min(rows[-1] + 2, r1)
    bc0, bc1 = max(cols[0] - 1, 0), min(cols[-1] + 2, w)
    er0, er1 = max(rows[0] - 1, 0), min(rows[-1] + 2, h)
    if br0 < br1 and max(bc0, c0) < min(bc1, c1):
        inner = np.sqrt(edt_sq(~occ[er0:er1, bc0:bc1], (br0 - er0, br1 - er0))) - 0.5
        sub = occ[br0:br1, bc0:bc1]
        vc0, vc1 = max(bc0, c0), min(bc1, c1)
        region = values[br0 - r0 : br1 - r0, vc0 - c0 : vc1 - c0]
        inner = inner[:, vc0 - bc0 : vc1 - bc0]
        sub = sub[:, vc0 - bc0 : vc1 - bc0]
        region[sub] = -inner[sub]
    return DistanceField(values, signed=True, origin=out_origin)


def disk_offsets(radius: float) -> np.ndarray:
    """Integer offsets ``(dy, dx)`` of the disk structuring element ``dx^2 + dy^2 <= r^2``."""
    r = int(np.floor(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    keep = xx * xx + yy * yy <= radius * radius
    return np.stack([yy[keep], xx[keep]], axis=1)


def dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    if radius < 0:
        raise ValueError("radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    return edt_sq(mask) <= radius * radius


def erode(mask: np.ndarray, radius: float) -> np.ndarray:
    """Disk erosion; pixels beyond the image border count as unset."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    pad = int(np.ceil(radius)) + 1
    padded = np.pad(mask, pad, constant_values=False)
    eroded = ~(edt_sq(~padded) <= radius * radius)
    return eroded[pad:-pad, pad:-pad]
