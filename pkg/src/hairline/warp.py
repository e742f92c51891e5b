"""Piecewise-affine warping driven by 68 facial landmarks.

The source landmarks plus the four source-image corners are Delaunay
triangulated. Each triangle is carried to the same vertex indices in the
destination (destination landmarks plus destination corners), and every
destination pixel is mapped back into the source through its triangle's
affine transform. Masks are resampled nearest-neighbor, color bilinearly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay

from .errors import DegenerateTriangle, DimensionMismatch, OutOfBoundsLandmark
from .ingest import HairMask, LandmarkSet

_AREA_EPS = 1e-9
_BARY_EPS = 1e-9


def _corners(shape) -> np.ndarray:
    h, w = shape[:2]
    return np.array([(0, 0), (w - 1, 0), (w - 1, h - 1), (0, h - 1)], dtype=np.float64)


def _check_bounds(lm: LandmarkSet, shape, which: str) -> None:
    h, w = shape[:2]
    pts = lm.points
    if (pts[:, 0] > w - 1).any() or (pts[:, 1] > h - 1).any():
        raise OutOfBoundsLandmark(f"{which} landmarks fall outside the {w}x{h} image")


def _areas(p: np.ndarray) -> np.ndarray:
    """Signed areas of a (T, 3, 2) stack of triangles."""
    return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


@dataclass(frozen=True)
class WarpMap:
    """Source coordinates for every destination pixel; ``valid`` marks covered pixels."""

    x: np.ndarray
    y: np.ndarray
    valid: np.ndarray
    src_shape: tuple[int, int]


def piecewise_affine_map(src: LandmarkSet, dst: LandmarkSet, src_shape, dst_shape) -> WarpMap:
    _check_bounds(src, src_shape, "source")
    _check_bounds(dst, dst_shape, "destination")
    src_pts = np.vstack([src.points, _corners(src_shape)])
    dst_pts = np.vstack([dst.points, _corners(dst_shape)])
    simplices = Delaunay(src_pts).simplices
    # qhull's output order is not part of its contract; fix one
    simplices = simplices[np.lexsort(np.sort(simplices, axis=1).T[::-1])]

    d = dst_pts[simplices]  # (T, 3, 2)
    s = src_pts[simplices]
    area_d = _areas(d)
    area_s = _areas(s)
    bad = np.flatnonzero((np.abs(area_d) < _AREA_EPS) | (np.abs(area_s) < _AREA_EPS))
    if bad.size:
        tri = tuple(int(i) for i in simplices[bad[0]])
        raise DegenerateTriangle(f"triangle {tri} has zero area")

    # barycentric weights as affine functions of the pixel: l = a*x + b*y + c
    two_a = 2.0 * area_d
    a1 = (d[:, 2, 1] - d[:, 0, 1]) / two_a
    b1 = -(d[:, 2, 0] - d[:, 0, 0]) / two_a
    c1 = -(a1 * d[:, 0, 0] + b1 * d[:, 0, 1])
    a2 = -(d[:, 1, 1] - d[:, 0, 1]) / two_a
    b2 = (d[:, 1, 0] - d[:, 0, 0]) / two_a
    c2 = -(a2 * d[:, 0, 0] + b2 * d[:, 0, 1])

    h, w = dst_shape[:2]
    x_lo = np.clip(np.ceil(d[:, :, 0].min(axis=1) - _BARY_EPS), 0, w).astype(int).tolist()
    x_hi = np.clip(np.floor(d[:, :, 0].max(axis=1) + _BARY_EPS) + 1, 0, w).astype(int).tolist()
    y_lo = np.clip(np.ceil(d[:, :, 1].min(axis=1) - _BARY_EPS), 0, h).astype(int).tolist()
    y_hi = np.clip(np.floor(d[:, :, 1].max(axis=1) + _BARY_EPS) + 1, 0, h).astype(int).tolist()
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)[:, None]

    map_x = np.zeros((h, w))
    map_y = np.zeros((h, w))
    valid = np.zeros((h, w), dtype=bool)
    for t in range(len(simplices)):
        x0, x1, y0, y1 = x_lo[t], x_hi[t], y_lo[t], y_hi[t]
        if x0 >= x1 or y0 >= y1:
            continue
        px, py = xs[x0:x1], ys[y0:y1]
        l1 = a1[t] * px + b1[t] * py + c1[t]
        l2 = a2[t] * px + b2[t] * py + c2[t]
        l0 = 1.0 - l1 - l2
        # first triangle in the fixed order wins on shared edges and fold-overs
        take = (l0 >= -_BARY_EPS) & (l1 >= -_BARY_EPS) & (l2 >= -_BARY_EPS) & ~valid[y0:y1, x0:x1]
        if not take.any():
            continue
        (s0x, s0y), (s1x, s1y), (s2x, s2y) = s[t]
        map_x[y0:y1, x0:x1][take] = (l0 * s0x + l1 * s1x + l2 * s2x)[take]
        map_y[y0:y1, x0:x1][take] = (l0 * s0y + l1 * s1y + l2 * s2y)[take]
        valid[y0:y1, x0:x1] |= take
    return WarpMap(map_x, map_y, valid, tuple(src_shape[:2]))


def sample_nearest(image: np.ndarray, wm: WarpMap) -> np.ndarray:
    h, w = wm.src_shape
    if image.shape[:2] != (h, w):
        raise DimensionMismatch(f"image is {image.shape[:2]}, warp expects {(h, w)}")
    xi = np.clip(np.rint(wm.x).astype(np.int64), 0, w - 1)
    yi = np.clip(np.rint(wm.y).astype(np.int64), 0, h - 1)
    out = image[yi, xi]
    out[~wm.valid] = 0
    return out


def sample_bilinear(image: np.ndarray, wm: WarpMap) -> np.ndarray:
    """Bilinear resample, rounded back to the input dtype."""
    h, w = wm.src_shape
    if image.shape[:2] != (h, w):
        raise DimensionMismatch(f"image is {image.shape[:2]}, warp expects {(h, w)}")
    x = np.clip(wm.x, 0, w - 1)
    y = np.clip(wm.y, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    img = image.astype(np.float64)
    if img.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    out = out.astype(image.dtype)
    out[~wm.valid] = 0
    return out


def warp_mask(mask: HairMask, src: LandmarkSet, dst: LandmarkSet, out_shape=None) -> HairMask:
    """Carry ``mask`` from the image with landmarks ``src`` onto the one with ``dst``.

    ``out_shape`` is the destination image size, defaulting to the mask's own.
    """
    out_shape = mask.bitmap.shape if out_shape is None else tuple(out_shape[:2])
    wm = piecewise_affine_map(src, dst, mask.bitmap.shape, out_shape)
    return HairMask(sample_nearest(np.asarray(mask.bitmap), wm))
