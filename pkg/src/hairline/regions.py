"""Landmark-defined face regions and polygon rasterization.

Region polygons use iBUG-68 indices:

* mustache: nose base 31..35, then the outer upper lip from the right mouth
  corner 54 back to the left corner 48;
* beard: jawline 0..16, then the outer lower lip 54..59 and corner 48;
* both: union of the two fills.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import DegeneratePolygon
from .ingest import HairMask, LandmarkSet


class Region(str, Enum):
    MUSTACHE = "mustache"
    BEARD = "beard"
    BOTH = "both"


MUSTACHE_POLYGON = (31, 32, 33, 34, 35, 54, 53, 52, 51, 50, 49, 48)
BEARD_POLYGON = tuple(range(17)) + (54, 55, 56, 57, 58, 59, 48)

# frontal face in unit coordinates (x right, y down), iBUG-68 order
_BROW_L = [(0.18, 0.30), (0.23, 0.27), (0.29, 0.26), (0.35, 0.265), (0.42, 0.28)]
_EYE_L = [(0.26, 0.38), (0.30, 0.36), (0.34, 0.36), (0.38, 0.38), (0.34, 0.40), (0.30, 0.40)]
_TEMPLATE = np.array(
    [(0.5 - 0.4 * np.cos(t), 0.35 + 0.57 * np.sin(t)) for t in np.linspace(0.0, np.pi, 17)]
    + _BROW_L
    + [(1.0 - x, y) for x, y in reversed(_BROW_L)]
    + [(0.5, 0.36), (0.5, 0.43), (0.5, 0.50), (0.5, 0.57)]
    + [(0.42, 0.62), (0.46, 0.635), (0.5, 0.645), (0.54, 0.635), (0.58, 0.62)]
    + _EYE_L
    + [(0.62, 0.38), (0.66, 0.36), (0.70, 0.36), (0.74, 0.38), (0.70, 0.40), (0.66, 0.40)]
    + [(0.38, 0.76), (0.42, 0.73), (0.46, 0.715), (0.5, 0.72), (0.54, 0.715), (0.58, 0.73)]
    + [(0.62, 0.76), (0.58, 0.80), (0.54, 0.82), (0.5, 0.825), (0.46, 0.82), (0.42, 0.80)]
    + [(0.40, 0.76), (0.45, 0.745), (0.5, 0.75), (0.55, 0.745), (0.60, 0.76)]
    + [(0.55, 0.775), (0.5, 0.78), (0.45, 0.775)]
)
assert _TEMPLATE.shape == (68, 2)


def frontal_template(width: int, height: int) -> LandmarkSet:
    """A synthetic frontal 68-point face filling a width x height image."""
    return LandmarkSet(_TEMPLATE * np.array([width - 1, height - 1], dtype=np.float64))


def polygon_area(vertices) -> float:
    v = np.asarray(vertices, dtype=np.float64)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def fill_polygon(vertices, shape: tuple[int, int]) -> np.ndarray:
    """Even-odd scanline fill sampled at integer pixel centers.

    A pixel (row r, col c) is set when the point (c, r) lies inside the
    polygon; edges are half-open so shared edges are filled exactly once.
    """
    h, w = shape
    v = np.round(np.asarray(vertices, dtype=np.float64), 9)
    if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
        raise DegeneratePolygon(f"polygon needs at least 3 (x, y) vertices, got shape {v.shape}")
    if abs(polygon_area(v)) < 1e-9:
        raise DegeneratePolygon("polygon has zero area")
    out = np.zeros((h, w), dtype=np.uint8)
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    r_lo = max(0, int(np.ceil(y0.min())))
    r_hi = min(h - 1, int(np.floor(y0.max())))
    for r in range(r_lo, r_hi + 1):
        hit = ((y0 <= r) & (r < y1)) | ((y1 <= r) & (r < y0))
        if not hit.any():
            continue
        xa, ya, xb, yb = x0[hit], y0[hit], x1[hit], y1[hit]
        xs = np.sort(np.round(xa + (r - ya) * (xb - xa) / (yb - ya), 9))
        for left, right in zip(xs[0::2], xs[1::2]):
            c0 = max(0, int(np.ceil(left)))
            c1 = min(w, int(np.ceil(right)))
            if c1 > c0:
                out[r, c0:c1] = 1
    return out


def region_polygon(landmarks: LandmarkSet, region: Region | str) -> list[np.ndarray]:
    region = Region(region)
    parts = []
    if region in (Region.MUSTACHE, Region.BOTH):
        parts.append(landmarks.points[list(MUSTACHE_POLYGON)])
    if region in (Region.BEARD, Region.BOTH):
        parts.append(landmarks.points[list(BEARD_POLYGON)])
    return parts


def region_mask(landmarks: LandmarkSet, region: Region | str, shape: tuple[int, int]) -> HairMask:
    """Rasterized mustache, beard, or combined area for an image of ``shape``."""
    out = np.zeros(shape[:2], dtype=np.uint8)
    for poly in region_polygon(landmarks, region):
        out |= fill_polygon(poly, shape[:2])
    return HairMask(out)
