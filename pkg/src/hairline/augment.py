"""Facial-hair data augmentation.

Three modes operate on an image:

* ``hair-transfer``: warp a facial-hair mask from a source image onto the
  target's landmarks and copy the source's (warped) pixels under it;
* ``random-mask``: fill the target's own facial-hair mask with uniform noise;
* ``random-region``: fill a landmark-defined mustache/beard polygon with noise.

Each in-scope image is augmented with probability p. All draws for an image
come from its own generator keyed by (seed, image id), so results do not
depend on processing order.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import DimensionMismatch, InvalidSpec, MissingLandmarks, MissingMask
from .ingest import HairMask, ImageRecord, LandmarkSet, Sex
from .regions import Region, region_mask
from .warp import piecewise_affine_map, sample_bilinear, sample_nearest

log = logging.getLogger(__name__)

DEFAULT_MIN_HAIR_FRACTION = 0.15


class Mode(str, Enum):
    HAIR_TRANSFER = "hair-transfer"
    RANDOM_MASK = "random-mask"
    RANDOM_REGION = "random-region"


class Scope(str, Enum):
    MALE = "male"
    ALL = "all"


@dataclass(frozen=True)
class SourceImage:
    image_id: str
    image: np.ndarray
    mask: HairMask
    landmarks: LandmarkSet


@dataclass(frozen=True)
class AugmentationSpec:
    mode: Mode
    probability: float
    scope: Scope = Scope.MALE
    seed: int = 0
    region: Region | None = None
    source_pool: tuple[SourceImage, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "scope", Scope(self.scope))
        object.__setattr__(self, "source_pool", tuple(self.source_pool))
        if self.region is not None:
            object.__setattr__(self, "region", Region(self.region))
        if not 0.0 <= self.probability <= 1.0:
            raise InvalidSpec(f"probability {self.probability} outside [0, 1]")
        if self.mode is Mode.HAIR_TRANSFER and not self.source_pool:
            raise InvalidSpec("hair transfer needs a non-empty source pool")
        if self.mode is Mode.RANDOM_REGION and self.region is None:
            raise InvalidSpec("random-region mode needs a region")


def hair_fraction_ok(mask: HairMask, min_hair_fraction: float = DEFAULT_MIN_HAIR_FRACTION) -> bool:
    return mask.hair_fraction > min_hair_fraction


def filter_source_pool(dataset, min_hair_fraction: float = DEFAULT_MIN_HAIR_FRACTION, image_ids=None) -> list[str]:
    """Ids of images whose mask covers more than ``min_hair_fraction`` of pixels.

    Images without a mask are skipped.
    """
    keep = []
    ids = image_ids if image_ids is not None else [r.image_id for r in dataset.manifest]
    for iid in ids:
        mask = dataset.mask(iid)
        if mask is not None and hair_fraction_ok(mask, min_hair_fraction):
            keep.append(iid)
    return keep


def load_source_pool(dataset, image_ids: Iterable[str]) -> list[SourceImage]:
    pool = []
    for iid in image_ids:
        mask = dataset.mask(iid)
        if mask is None:
            raise MissingMask(f"source image {iid!r} has no mask")
        lm = dataset.landmarks.get(iid)
        if lm is None:
            raise MissingLandmarks(f"source image {iid!r} has no landmarks")
        pool.append(SourceImage(iid, dataset.image(iid), mask, lm))
    return pool


def transfer_hair_with_mask(
    cs_image: np.ndarray, cs_landmarks: LandmarkSet, source: SourceImage
) -> tuple[np.ndarray, HairMask]:
    if source.mask.bitmap.shape != source.image.shape[:2]:
        raise DimensionMismatch("source mask and source image sizes differ")
    if source.image.shape[2:] != cs_image.shape[2:]:
        raise DimensionMismatch(f"channel layouts differ: {source.image.shape} vs {cs_image.shape}")
    wm = piecewise_affine_map(source.landmarks, cs_landmarks, source.image.shape, cs_image.shape)
    warped = sample_nearest(np.asarray(source.mask.bitmap), wm).astype(bool)
    pixels = sample_bilinear(source.image, wm)
    out = cs_image.copy()
    out[warped] = pixels[warped]
    return out, HairMask(warped)


def transfer_hair(cs_image: np.ndarray, cs_landmarks: LandmarkSet, source: SourceImage) -> np.ndarray:
    """Copy the source's facial-hair pixels onto a clean-shaven image."""
    return transfer_hair_with_mask(cs_image, cs_landmarks, source)[0]


def random_pixel_fill(image: np.ndarray, mask, rng: np.random.Generator) -> np.ndarray:
    """Replace masked pixels with independent uniform draws over the channel range."""
    m = np.asarray(mask.bitmap if isinstance(mask, HairMask) else mask).astype(bool)
    if m.shape != image.shape[:2]:
        raise DimensionMismatch(f"mask {m.shape} does not match image {image.shape[:2]}")
    out = image.copy()
    size = (int(m.sum()),) + image.shape[2:]
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        out[m] = rng.integers(info.min, info.max, size=size, endpoint=True, dtype=image.dtype)
    else:
        out[m] = rng.random(size=size).astype(image.dtype)
    return out


def seed_lane(seed: int, image_id: str) -> int:
    h = hashlib.blake2b(image_id.encode("utf-8"), digest_size=8, key=int(seed & (2**64 - 1)).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


def image_rng(seed: int, image_id: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed & (2**64 - 1), seed_lane(seed, image_id)])))


def in_scope(record: ImageRecord, scope: Scope) -> bool:
    return scope is Scope.ALL or record.sex is Sex.MALE


@dataclass
class AugmentOutcome:
    image_id: str
    augmented: bool
    mode: str
    seed_lane: int
    source_id: str | None = None
    region: str | None = None
    status: str = "ok"
    image: np.ndarray | None = field(default=None, repr=False)
    mask: HairMask | None = field(default=None, repr=False)

    def log_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "augmented": self.augmented,
            "mode": self.mode,
            "region": self.region,
            "source_id": self.source_id,
            "seed_lane": f"{self.seed_lane:016x}",
            "status": self.status,
        }


def augment_one(record: ImageRecord, data, spec: AugmentationSpec) -> AugmentOutcome:
    """Decide and (maybe) apply augmentation to one record.

    ``data`` supplies ``image(id)``, ``mask(id)`` and a ``landmarks`` mapping.
    The Bernoulli draw comes first so missing inputs never change which
    images are selected.
    """
    rng = image_rng(spec.seed, record.image_id)
    lane = seed_lane(spec.seed, record.image_id)
    region = spec.region.value if spec.mode is Mode.RANDOM_REGION else None
    out = AugmentOutcome(record.image_id, False, spec.mode.value, lane, region=region)
    if not rng.random() < spec.probability:
        return out

    if spec.mode is Mode.HAIR_TRANSFER:
        source = spec.source_pool[int(rng.integers(len(spec.source_pool)))]
        out.source_id = source.image_id
        lm = data.landmarks.get(record.image_id)
        if lm is None:
            out.status = "missing_landmarks"
            return out
        out.image, out.mask = transfer_hair_with_mask(data.image(record.image_id), lm, source)
    elif spec.mode is Mode.RANDOM_MASK:
        mask = data.mask(record.image_id)
        if mask is None:
            out.status = "missing_mask"
            return out
        img = data.image(record.image_id)
        out.image, out.mask = random_pixel_fill(img, mask, rng), mask
    else:
        lm = data.landmarks.get(record.image_id)
        if lm is None:
            out.status = "missing_landmarks"
            return out
        img = data.image(record.image_id)
        mask = region_mask(lm, spec.region, img.shape)
        out.image, out.mask = random_pixel_fill(img, mask, rng), mask
    out.augmented = True
    return out


def iter_augmentation(records: Iterable[ImageRecord], data, spec: AugmentationSpec) -> Iterator[AugmentOutcome]:
    for rec in records:
        if in_scope(rec, spec.scope):
            yield augment_one(rec, data, spec)


@dataclass
class AugmentationResult:
    images: dict[str, np.ndarray]
    log: list[dict]
    counts: Counter


def apply_augmentation(records: Iterable[ImageRecord], data, spec: AugmentationSpec) -> AugmentationResult:
    """One augmentation pass (an epoch snapshot) over ``records``."""
    images, entries, counts = {}, [], Counter()
    for outcome in iter_augmentation(records, data, spec):
        entries.append(outcome.log_record())
        counts["in_scope"] += 1
        if outcome.augmented:
            counts["augmented"] += 1
            images[outcome.image_id] = outcome.image
        elif outcome.status != "ok":
            counts[outcome.status] += 1
    if counts["missing_landmarks"] or counts["missing_mask"]:
        log.warning(
            "skipped %d images without landmarks and %d without masks",
            counts["missing_landmarks"],
            counts["missing_mask"],
        )
    return AugmentationResult(images, entries, counts)


@dataclass
class InMemoryImages:
    """Minimal image/mask/landmark provider for arrays already in memory."""

    images: Mapping[str, np.ndarray]
    masks: Mapping[str, HairMask] = field(default_factory=dict)
    landmarks: Mapping[str, LandmarkSet] = field(default_factory=dict)

    def image(self, image_id: str) -> np.ndarray:
        return self.images[image_id]

    def mask(self, image_id: str) -> HairMask | None:
        return self.masks.get(image_id)

