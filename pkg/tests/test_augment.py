import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from matplotlib.path import Path as MplPath

from hairline.augment import (
    AugmentationSpec,
    InMemoryImages,
    Mode,
    Scope,
    SourceImage,
    apply_augmentation,
    filter_source_pool,
    hair_fraction_ok,
    random_pixel_fill,
    transfer_hair,
    transfer_hair_with_mask,
)
from hairline.errors import DegeneratePolygon, DegenerateTriangle, InvalidSpec, OutOfBoundsLandmark
from hairline.ingest import HairMask, ImageRecord, LandmarkSet, Sex
from hairline.regions import MUSTACHE_POLYGON, Region, fill_polygon, frontal_template, region_mask
from hairline.synth import chin_strip
from hairline.warp import warp_mask

SIZE = 96


@pytest.fixture(scope="module")
def face():
    return frontal_template(SIZE, SIZE)


def centroid_x(mask: HairMask) -> float:
    return float(np.nonzero(mask.bitmap)[1].mean())


# -- warp -------------------------------------------------------------------


def test_identity_warp_is_exact(face, rng):
    bits = (rng.random((SIZE, SIZE)) < 0.3).astype(np.uint8)
    out = warp_mask(HairMask(bits), face, face)
    assert np.array_equal(out.bitmap, bits)


def test_translation_moves_centroid():
    face = frontal_template(64, 64).translated(12, 16)
    mask = region_mask(face, Region.BOTH, (SIZE, SIZE))
    moved = warp_mask(mask, face, face.translated(10, 0))
    assert centroid_x(moved) - centroid_x(mask) == pytest.approx(10, abs=1)


def test_empty_mask_stays_empty(face):
    out = warp_mask(HairMask(np.zeros((SIZE, SIZE))), face, face.translated(3, 2))
    assert out.hair_pixels == 0


def test_warp_to_other_size(face):
    mask = region_mask(face, Region.BEARD, (SIZE, SIZE))
    dst = frontal_template(2 * SIZE, 2 * SIZE)
    out = warp_mask(mask, face, dst, (2 * SIZE, 2 * SIZE))
    assert out.bitmap.shape == (2 * SIZE, 2 * SIZE)
    assert out.hair_pixels == pytest.approx(4 * mask.hair_pixels, rel=0.05)


def test_warp_errors(face):
    pts = face.points.copy()
    pts[:] = np.linspace(5, 50, 68)[:, None]  # all on a line
    with pytest.raises(DegenerateTriangle):
        warp_mask(HairMask(np.zeros((SIZE, SIZE))), face, LandmarkSet(pts))
    with pytest.raises(OutOfBoundsLandmark):
        warp_mask(HairMask(np.zeros((SIZE, SIZE))), face, face.translated(SIZE, 0))


# -- regions ----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0.5, 30.5), st.floats(0.5, 30.5)), min_size=3, max_size=9),
)
def test_fill_matches_point_in_polygon(verts):
    v = np.array(verts) + 0.123456  # keep vertices off the pixel lattice
    try:
        got = fill_polygon(v, (32, 32)).astype(bool)
    except DegeneratePolygon:
        return
    yy, xx = np.mgrid[0:32, 0:32]
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    inside = MplPath(v).contains_points(pts, radius=0.0).reshape(32, 32)
    # pixels within 1e-6 of an edge may legitimately go either way
    near = np.zeros_like(inside)
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        d = b - a
        if d @ d == 0:
            continue
        t = np.clip(((pts - a) @ d) / (d @ d), 0, 1)
        near |= (np.linalg.norm(pts - (a + t[:, None] * d), axis=1) < 1e-6).reshape(32, 32)
    assert np.array_equal(got[~near], inside[~near])


def test_mustache_between_nose_and_lip(face):
    mask = region_mask(face, Region.MUSTACHE, (SIZE, SIZE))
    rows = np.nonzero(mask.bitmap)[0]
    pts = face.points
    nose_row = pts[31:36, 1].min()
    lip_row = pts[list(MUSTACHE_POLYGON[5:]), 1].max()
    assert rows.size > 0
    assert nose_row < rows.min() and rows.max() < lip_row


def test_both_is_union(face):
    m = region_mask(face, Region.MUSTACHE, (SIZE, SIZE)).bitmap
    b = region_mask(face, Region.BEARD, (SIZE, SIZE)).bitmap
    assert np.array_equal(region_mask(face, Region.BOTH, (SIZE, SIZE)).bitmap, m | b)


@settings(max_examples=20, deadline=None)
@given(st.integers(-8, 8), st.integers(-8, 8), st.sampled_from(list(Region)))
def test_region_translation_equivariant(dx, dy, region):
    big = 128
    lm = frontal_template(SIZE, SIZE).translated(16, 16)
    a = region_mask(lm, region, (big, big)).bitmap
    b = region_mask(lm.translated(dx, dy), region, (big, big)).bitmap
    assert np.array_equal(np.roll(a, (dy, dx), axis=(0, 1)), b)


def test_region_degenerate():
    with pytest.raises(DegeneratePolygon):
        fill_polygon([(0, 0), (1, 1), (2, 2)], (5, 5))


# -- pixel operations -------------------------------------------------------


def test_random_fill(rng):
    img = np.full((120, 100, 3), 7, np.uint8)
    empty = random_pixel_fill(img, np.zeros((120, 100)), rng)
    assert np.array_equal(empty, img)
    full = random_pixel_fill(img, np.ones((120, 100)), rng)
    assert np.all(np.abs(full.reshape(-1, 3).mean(axis=0) - 127.5) < 3)
    g1 = random_pixel_fill(img, np.ones((120, 100)), np.random.default_rng(9))
    g2 = random_pixel_fill(img, np.ones((120, 100)), np.random.default_rng(9))
    assert g1.tobytes() == g2.tobytes()


def _source(face, mask_bits, value=20):
    img = np.full((SIZE, SIZE, 3), value, np.uint8)
    return SourceImage("src", img, HairMask(mask_bits), face)


def test_transfer_empty_mask_is_noop(face):
    cs = np.full((SIZE, SIZE, 3), 200, np.uint8)
    out = transfer_hair(cs, face.translated(2, 1), _source(face, np.zeros((SIZE, SIZE))))
    assert np.array_equal(out, cs)


def test_transfer_diff_equals_mask_support(face):
    cs = np.full((SIZE, SIZE, 3), 200, np.uint8)
    src = _source(face, chin_strip(face, (SIZE, SIZE), 0.3))
    dst = face.translated(4, -3)
    out, warped = transfer_hair_with_mask(cs, dst, src)
    changed = np.any(out != cs, axis=2)
    assert warped.hair_pixels > 0
    assert np.array_equal(changed, warped.bitmap.astype(bool))
    assert np.all(out[changed] == 20)
    again = transfer_hair(cs, dst, src)
    assert again.tobytes() == out.tobytes()


def test_source_pool_strict_threshold():
    m = np.zeros((20, 20), np.uint8)
    m.flat[:60] = 1
    assert not hair_fraction_ok(HairMask(m), 0.15)
    m.flat[60] = 1
    assert hair_fraction_ok(HairMask(m), 0.15)
    m2 = np.zeros((10, 10), np.uint8)
    m2.flat[:20] = 1
    assert hair_fraction_ok(HairMask(m2))


def test_filter_source_pool_recount(small_cohort):
    ds = small_cohort.to_dataset()

    class Masks:
        manifest = ds.manifest

        @staticmethod
        def mask(iid):
            return small_cohort.masks.get(iid)

    got = filter_source_pool(Masks, 0.1)
    want = [r.image_id for r in ds.manifest
            if r.image_id in small_cohort.masks
            and np.count_nonzero(small_cohort.masks[r.image_id].bitmap) / small_cohort.masks[r.image_id].bitmap.size > 0.1]
    assert got == want


# -- whole pass -------------------------------------------------------------


def _toy(n, sexes=(Sex.MALE,), size=16):
    recs = [ImageRecord(f"im{j:05d}", f"s{j // 4}", "C", sexes[j % len(sexes)]) for j in range(n)]
    img = np.zeros((size, size), np.uint8)
    mask = np.zeros((size, size), np.uint8)
    mask[4:8, 4:8] = 1
    data = InMemoryImages({r.image_id: img for r in recs}, {r.image_id: HairMask(mask) for r in recs})
    return recs, data


def test_bernoulli_extremes_and_rate():
    recs, data = _toy(10_000)
    zero = apply_augmentation(recs[:500], data, AugmentationSpec("random-mask", 0.0, seed=1))
    assert zero.counts["augmented"] == 0 and not zero.images
    one = apply_augmentation(recs[:500], data, AugmentationSpec("random-mask", 1.0, Scope.ALL, seed=1))
    assert one.counts["augmented"] == 500
    mid = apply_augmentation(recs, data, AugmentationSpec("random-mask", 0.4, seed=2))
    assert 3853 <= mid.counts["augmented"] <= 4147


def test_scope_filter_and_order_independence():
    recs, data = _toy(400, sexes=(Sex.MALE, Sex.FEMALE, Sex.UNKNOWN))
    spec = AugmentationSpec("random-mask", 1.0, Scope.MALE, seed=3)
    res = apply_augmentation(recs, data, spec)
    males = {r.image_id for r in recs if r.sex is Sex.MALE}
    assert set(res.images) == males
    assert {e["image_id"] for e in res.log} == males
    rev = apply_augmentation(list(reversed(recs)), data, spec)
    for iid in males:
        assert rev.images[iid].tobytes() == res.images[iid].tobytes()


def test_missing_inputs_are_logged_and_skipped():
    recs, data = _toy(50)
    spec = AugmentationSpec("random-region", 1.0, region="beard", seed=0)
    res = apply_augmentation(recs, data, spec)
    assert res.counts["missing_landmarks"] == 50 and not res.images
    assert all(e["status"] == "missing_landmarks" for e in res.log)


def test_spec_validation(face):
    with pytest.raises(InvalidSpec):
        AugmentationSpec("hair-transfer", 0.5)
    with pytest.raises(InvalidSpec):
        AugmentationSpec("random-region", 0.5)
    with pytest.raises(InvalidSpec):
        AugmentationSpec("random-mask", 1.5)
    assert AugmentationSpec("random-region", 0.5, region="both").mode is Mode.RANDOM_REGION
