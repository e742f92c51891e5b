"""Loading and validation of the toolkit's input artifacts.

Five inputs are consumed: the dataset manifest (CSV), attribute scores (CSV),
embeddings (``EMB1`` binary plus an ``.ids`` companion), landmarks (long CSV)
and facial-hair masks (8-bit PNG). Everything is validated on load and handed
back as immutable objects.
"""

from __future__ import annotations

import csv
import io
import logging
import struct
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np
from PIL import Image

from .errors import (
    BadMagic,
    DimensionMismatch,
    DuplicateId,
    InvalidMask,
    MissingField,
    NonFiniteValue,
    OutOfRangeScore,
    ParseError,
    TruncatedPayload,
    WrongPointCount,
)

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("image_id", "subject_id", "cohort", "sex", "path")
OPTIONAL_MANIFEST_COLUMNS = ("mask_path",)
ATTRIBUTE_NAMES = (
    "no_beard",
    "chin",
    "side_to_side",
    "no_mustache",
    "mustache_connected",
    "mustache_isolated",
    "five_oclock_shadow",
    "short",
    "medium",
    "long",
)
EMB_MAGIC = b"EMB1"
EMB_HEADER = struct.Struct("<4sII")
N_LANDMARKS = 68
UNIT_NORM_TOL = 1e-4


class Sex(str, Enum):
    MALE = "male"
    FEMALE = "female"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class AttributeScores:
    """Facial-hair attribute confidences, each in [0, 1]."""

    no_beard: float
    chin: float
    side_to_side: float
    no_mustache: float
    mustache_connected: float
    mustache_isolated: float
    five_oclock_shadow: float
    short: float
    medium: float
    long: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (0.0 <= v <= 1.0):
                raise OutOfRangeScore(f"{f.name}={v!r} outside [0, 1]")

    @classmethod
    def from_mapping(cls, values: Mapping[str, float]) -> "AttributeScores":
        return cls(**{name: float(values.get(name, 0.0)) for name in ATTRIBUTE_NAMES})

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in ATTRIBUTE_NAMES)


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    subject_id: str
    cohort: str
    sex: Sex = Sex.UNKNOWN
    path: str = ""
    attributes: AttributeScores | None = None
    embedding_ref: int | None = None
    mask_ref: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...]
    embedding_dim: int | None = None
    root: Path = Path(".")
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for i, rec in enumerate(self.records):
            if not rec.subject_id:
                raise MissingField(f"record {rec.image_id!r} has an empty subject_id")
            if rec.image_id in index:
                raise DuplicateId(f"image_id {rec.image_id!r} appears more than once")
            index[rec.image_id] = i
        object.__setattr__(self, "index", MappingProxyType(index))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, image_id: str) -> ImageRecord:
        return self.records[self.index[image_id]]

    def __contains__(self, image_id) -> bool:
        return image_id in self.index

    @property
    def cohorts(self) -> frozenset[str]:
        return frozenset(r.cohort for r in self.records)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def with_attributes(self, attributes: Mapping[str, AttributeScores]) -> "DatasetManifest":
        unknown = set(attributes) - set(self.index)
        if unknown:
            log.warning("%d attribute rows refer to images not in the manifest", len(unknown))
        recs = tuple(replace(r, attributes=attributes.get(r.image_id)) for r in self.records)
        return replace(self, records=recs)

    def with_embeddings(self, store: "EmbeddingStore") -> "DatasetManifest":
        if store.ids is None:
            raise MissingField("embedding store has no image id companion")
        rows = {iid: i for i, iid in enumerate(store.ids)}
        recs = tuple(replace(r, embedding_ref=rows.get(r.image_id)) for r in self.records)
        return replace(self, records=recs, embedding_dim=store.dim)


@dataclass(frozen=True)
class EmbeddingStore:
    """Row-major float32 embedding matrix, read-only."""

    data: np.ndarray
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype="<f4")
        if data.ndim != 2:
            raise DimensionMismatch(f"embeddings must be 2-D, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise NonFiniteValue("embedding payload contains NaN or Inf")
        if self.ids is not None:
            if len(self.ids) != data.shape[0]:
                raise DimensionMismatch(f"{len(self.ids)} ids for {data.shape[0]} embedding rows")
            if len(set(self.ids)) != len(self.ids):
                raise DuplicateId("embedding id list contains duplicates")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def unit_norm(self) -> bool:
        if self.count == 0:
            return True
        norms = np.linalg.norm(self.data.astype(np.float64), axis=1)
        return bool(np.all(np.abs(norms - 1.0) <= UNIT_NORM_TOL))


@dataclass(frozen=True)
class LandmarkSet:
    """68 (x, y) points in pixel coordinates, iBUG ordering."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.shape != (N_LANDMARKS, 2):
            raise WrongPointCount(f"expected {N_LANDMARKS} points, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise NonFiniteValue("landmark coordinates must be finite")
        if (pts < 0).any():
            raise ParseError("landmark coordinates must be non-negative")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def translated(self, dx: float, dy: float) -> "LandmarkSet":
        return LandmarkSet(self.points + np.array([dx, dy]))


@dataclass(frozen=True)
class HairMask:
    """Binary facial-hair map; nonzero bytes mark hair pixels."""

    bitmap: np.ndarray

    def __post_init__(self):
        bm = np.array(self.bitmap)
        if bm.ndim != 2:
            raise InvalidMask(f"mask must be single-channel, got shape {bm.shape}")
        bm = (bm != 0).astype(np.uint8)
        bm.setflags(write=False)
        object.__setattr__(self, "bitmap", bm)

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]

    @property
    def hair_pixels(self) -> int:
        return int(np.count_nonzero(self.bitmap))

    @property
    def hair_fraction(self) -> float:
        return self.hair_pixels / self.bitmap.size if self.bitmap.size else 0.0


@dataclass(frozen=True)
class Dataset:
    """Manifest plus whatever auxiliary inputs were supplied."""

    manifest: DatasetManifest
    embeddings: EmbeddingStore | None = None
    landmarks: Mapping[str, LandmarkSet] = field(default_factory=dict)

    def embedding(self, image_id: str) -> np.ndarray:
        rec = self.manifest[image_id]
        if self.embeddings is None or rec.embedding_ref is None:
            raise MissingField(f"no embedding for image {image_id!r}")
        return self.embeddings.data[rec.embedding_ref]

    def mask(self, image_id: str) -> HairMask | None:
        rec = self.manifest[image_id]
        if not rec.mask_ref:
            return None
        return load_mask(self.manifest.resolve(rec.mask_ref))

    def image(self, image_id: str) -> np.ndarray:
        rec = self.manifest[image_id]
        with Image.open(self.manifest.resolve(rec.path)) as im:
            return np.array(im)


# -- readers ----------------------------------------------------------------


def _read_csv(path, required: Iterable[str]) -> tuple[list[str], list[dict[str, str]]]:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return list(required), []
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader)]
    missing = [c for c in required if c not in header]
    if missing:
        raise MissingField(f"{path}: header lacks column(s) {', '.join(missing)}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        rows.append(dict(zip(header, (v.strip() for v in row))))
    return header, rows


def _parse_sex(value: str, where: str) -> Sex:
    try:
        return Sex(value.lower() or "unknown")
    except ValueError:
        raise ParseError(f"{where}: sex must be male/female/unknown, got {value!r}") from None


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    header, rows = _read_csv(path, MANIFEST_COLUMNS)
    records = []
    for lineno, row in enumerate(rows, start=2):
        where = f"{path}:{lineno}"
        for col in ("image_id", "subject_id", "cohort"):
            if not row[col]:
                raise MissingField(f"{where}: empty {col}")
        records.append(
            ImageRecord(
                image_id=row["image_id"],
                subject_id=row["subject_id"],
                cohort=row["cohort"],
                sex=_parse_sex(row["sex"], where),
                path=row["path"],
                mask_ref=row.get("mask_path") or None,
            )
        )
    return DatasetManifest(tuple(records), root=path.parent)


def load_attributes(path) -> dict[str, AttributeScores]:
    path = Path(path)
    _, rows = _read_csv(path, ("image_id",) + ATTRIBUTE_NAMES)
    out = {}
    for lineno, row in enumerate(rows, start=2):
        iid = row["image_id"]
        if iid in out:
            raise DuplicateId(f"{path}:{lineno}: duplicate attribute row for {iid!r}")
        try:
            values = {name: float(row[name]) for name in ATTRIBUTE_NAMES}
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        out[iid] = AttributeScores(**values)
    return out


def embedding_ids_path(path) -> Path:
    return Path(path).with_suffix(".ids")


def load_embeddings(path, ids_path=None) -> EmbeddingStore:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < EMB_HEADER.size:
        raise TruncatedPayload(f"{path}: file shorter than the EMB1 header")
    magic, count, dim = EMB_HEADER.unpack_from(raw)
    if magic != EMB_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} is not {EMB_MAGIC!r}")
    expected = count * dim * 4
    payload = memoryview(raw)[EMB_HEADER.size :]
    if len(payload) < expected:
        raise TruncatedPayload(f"{path}: header claims {count}x{dim} floats, payload has {len(payload) // 4}")
    if len(payload) > expected:
        raise ParseError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4", count=count * dim).reshape(count, dim)

    ids_path = Path(ids_path) if ids_path else embedding_ids_path(path)
    ids = None
    if ids_path.exists():
        ids = tuple(line for line in ids_path.read_text(encoding="utf-8").splitlines() if line)
    return EmbeddingStore(data, ids)


def load_landmarks(path) -> dict[str, LandmarkSet]:
    path = Path(path)
    _, rows = _read_csv(path, ("image_id", "i", "x", "y"))
    raw: dict[str, dict[int, tuple[float, float]]] = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            i, x, y = int(row["i"]), float(row["x"]), float(row["y"])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if not 0 <= i < N_LANDMARKS:
            raise WrongPointCount(f"{path}:{lineno}: landmark index {i} outside 0..67")
        pts = raw.setdefault(row["image_id"], {})
        if i in pts:
            raise DuplicateId(f"{path}:{lineno}: landmark {i} repeated for {row['image_id']!r}")
        pts[i] = (x, y)
    out = {}
    for iid, pts in raw.items():
        if len(pts) != N_LANDMARKS:
            raise WrongPointCount(f"{path}: image {iid!r} has {len(pts)} landmarks, expected 68")
        out[iid] = LandmarkSet(np.array([pts[i] for i in range(N_LANDMARKS)]))
    return out


def load_mask(path) -> HairMask:
    with Image.open(path) as im:
        if im.mode not in ("L", "1"):
            raise InvalidMask(f"{path}: mask must be single-channel, got mode {im.mode}")
        return HairMask(np.array(im.convert("L")))


def load_dataset(manifest_path, embeddings=None, attributes=None, landmarks=None) -> Dataset:
    manifest = load_manifest(manifest_path)
    store = None
    if attributes:
        manifest = manifest.with_attributes(load_attributes(attributes))
    if embeddings:
        store = load_embeddings(embeddings)
        manifest = manifest.with_embeddings(store)
        if not store.unit_norm:
            log.info("embeddings are not unit-norm; cosine similarity will normalize rows")
    lms = load_landmarks(landmarks) if landmarks else {}
    return Dataset(manifest, store, MappingProxyType(lms))


# -- writers ----------------------------------------------------------------


def write_manifest(path, records: Iterable[ImageRecord]) -> None:
    records = list(records)
    with_mask = any(r.mask_ref for r in records)
    cols = MANIFEST_COLUMNS + (OPTIONAL_MANIFEST_COLUMNS if with_mask else ())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in records:
            row = [r.image_id, r.subject_id, r.cohort, r.sex.value, r.path]
            if with_mask:
                row.append(r.mask_ref or "")
            w.writerow(row)


def write_attributes(path, attributes: Mapping[str, AttributeScores]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("image_id",) + ATTRIBUTE_NAMES)
        for iid, a in attributes.items():
            w.writerow([iid] + [repr(float(v)) for v in a.as_tuple()])


def write_embeddings(path, data: np.ndarray, ids: Iterable[str] | None = None) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 2:
        raise DimensionMismatch(f"embeddings must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(EMB_HEADER.pack(EMB_MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())
    if ids is not None:
        embedding_ids_path(path).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def write_landmarks(path, landmarks: Mapping[str, LandmarkSet]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("image_id", "i", "x", "y"))
        for iid, lm in landmarks.items():
            for i, (x, y) in enumerate(lm.points):
                w.writerow([iid, i, repr(float(x)), repr(float(y))])


def write_mask(path, mask: HairMask) -> None:
    Image.fromarray(mask.bitmap * np.uint8(255), mode="L").save(path, format="PNG")
