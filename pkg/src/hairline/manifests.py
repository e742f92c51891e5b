"""Training-set manifests with controlled facial-hair frequency.

Everything starts from a superset: S male subjects, each with exactly k CS
and k FH images. Two protocols then pick k images per subject:

* across subjects: x subjects contribute their k CS images, the other S - x
  contribute their k FH images;
* within subjects: every subject contributes x CS and k - x FH images.

A fixed female pool is appended unchanged to every manifest. Randomness is
keyed by (seed, grid point, repetition, subject), so a subject's draw does
not depend on iteration order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DuplicateId, InsufficientImages, InsufficientSubjects, InvalidSpec, ParseError
from .labeling import HairLabel

FEMALE = "female"
_SUPERSET_LANE = 0x5355
_ASSIGN_LANE = 0x4153


class Protocol(str, Enum):
    ACROSS = "across"
    WITHIN = "within"


def _hash64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def derive_seed(base_seed: int, *keys: int) -> int:
    """64-bit seed derived from a base seed and integer keys."""
    ss = np.random.SeedSequence([int(base_seed) & (2**64 - 1), *[int(k) & (2**64 - 1) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) & (2**64 - 1) for k in keys])))


def default_grid(protocol: Protocol | str, subjects: int, k: int) -> list[int]:
    """Grid points used in the experiments: 11 subject counts, or 0..k images."""
    if Protocol(protocol) is Protocol.ACROSS:
        return [round(subjects * i / 10) for i in range(11)]
    return list(range(k + 1))


@dataclass(frozen=True)
class ManifestSpec:
    protocol: Protocol
    grid_point: int
    subjects_male: int = 5000
    images_per_subject: int = 12
    female_pool: tuple[tuple[str, str], ...] = ()
    repetition: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "female_pool", tuple(tuple(p) for p in self.female_pool))
        hi = self.subjects_male if self.protocol is Protocol.ACROSS else self.images_per_subject
        if not 0 <= self.grid_point <= hi:
            raise InvalidSpec(f"{self.protocol.value}: grid point {self.grid_point} outside [0, {hi}]")
        if self.subjects_male < 0 or self.images_per_subject < 1 or self.repetition < 0:
            raise InvalidSpec("subjects >= 0, images per subject >= 1 and repetition >= 0 required")

    @property
    def derived_seed(self) -> int:
        return derive_seed(self.seed, self.grid_point, self.repetition)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["protocol"] = self.protocol.value
        d["female_pool"] = [list(p) for p in self.female_pool]
        d["derived_seed"] = self.derived_seed
        return d


@dataclass(frozen=True)
class Superset:
    """The fixed k-CS/k-FH images of each selected male subject."""

    subjects: tuple[str, ...]
    cs: Mapping[str, tuple[str, ...]]
    fh: Mapping[str, tuple[str, ...]]
    k: int


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    image_id: str
    label: str


@dataclass
class TrainingManifest:
    entries: tuple[ManifestEntry, ...]
    provenance: ManifestSpec

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.image_id in seen:
                raise DuplicateId(f"image {e.image_id!r} selected twice")
            seen.add(e.image_id)

    def __len__(self):
        return len(self.entries)

    def count(self, label: str) -> int:
        return sum(1 for e in self.entries if e.label == label)

    @property
    def male_subjects(self) -> set[str]:
        return {e.subject_id for e in self.entries if e.label != FEMALE}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("subject_id", "image_id", "label"))
        for e in self.entries:
            w.writerow((e.subject_id, e.image_id, e.label))
        return buf.getvalue()

    def write(self, path) -> Path:
        """Write the CSV and a ``.json`` provenance sidecar; returns the sidecar path."""
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps(self.provenance.to_dict(), indent=1) + "\n", encoding="utf-8")
        return sidecar


def load_training_manifest(path) -> list[ManifestEntry]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"subject_id", "image_id", "label"} <= set(reader.fieldnames):
            raise ParseError(f"{path}: expected header subject_id,image_id,label")
        return [ManifestEntry(r["subject_id"], r["image_id"], r["label"]) for r in reader]


def load_female_pool(path) -> tuple[tuple[str, str], ...]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return ()
        if not {"subject_id", "image_id"} <= set(reader.fieldnames):
            raise ParseError(f"{path}: expected header subject_id,image_id")
        return tuple((r["subject_id"], r["image_id"]) for r in reader)


def _pools(labels: Mapping[str, HairLabel], subject_index: Mapping[str, str]):
    cs: dict[str, list[str]] = {}
    fh: dict[str, list[str]] = {}
    for iid, lab in labels.items():
        if lab is HairLabel.CS:
            cs.setdefault(subject_index[iid], []).append(iid)
        elif lab is HairLabel.FH:
            fh.setdefault(subject_index[iid], []).append(iid)
    return cs, fh


def find_superset(labels: Mapping[str, HairLabel], subject_index: Mapping[str, str], k: int) -> list[str]:
    cs, fh = _pools(labels, subject_index)
    return sorted(s for s in cs if len(cs[s]) >= k and len(fh.get(s, ())) >= k)


def build_superset(
    labels: Mapping[str, HairLabel],
    subject_index: Mapping[str, str],
    subjects: int,
    k: int,
    seed: int,
) -> Superset:
    """Pick S eligible subjects and k CS + k FH images for each.

    Depends only on ``seed``, so every grid point and repetition shares it.
    """
    eligible = find_superset(labels, subject_index, k)
    if len(eligible) < subjects:
        raise InsufficientSubjects(f"{len(eligible)} subjects have >= {k} CS and >= {k} FH images, need {subjects}")
    if len(eligible) > subjects:
        idx = _rng(seed, _SUPERSET_LANE).choice(len(eligible), size=subjects, replace=False)
        chosen = sorted(eligible[i] for i in idx)
    else:
        chosen = eligible
    cs_pool, fh_pool = _pools(labels, subject_index)
    cs, fh = {}, {}
    for s in chosen:
        rng = _rng(seed, _SUPERSET_LANE, _hash64(s))
        for pool, out in ((cs_pool, cs), (fh_pool, fh)):
            imgs = sorted(pool[s])
            pick = rng.choice(len(imgs), size=k, replace=False) if len(imgs) > k else range(k)
            out[s] = tuple(sorted(imgs[i] for i in pick))
    return Superset(tuple(chosen), cs, fh, k)


def _check(spec: ManifestSpec, superset: Superset) -> None:
    if len(superset.subjects) != spec.subjects_male:
        raise InsufficientSubjects(f"superset has {len(superset.subjects)} subjects, spec wants {spec.subjects_male}")
    if superset.k < spec.images_per_subject:
        raise InsufficientImages(f"superset holds {superset.k} images per label, spec wants {spec.images_per_subject}")
    for s in superset.subjects:
        if len(superset.cs[s]) < spec.images_per_subject or len(superset.fh[s]) < spec.images_per_subject:
            raise InsufficientImages(f"subject {s!r} lacks {spec.images_per_subject} CS or FH images")


def _finish(spec: ManifestSpec, male: list[ManifestEntry]) -> TrainingManifest:
    female = [ManifestEntry(s, i, FEMALE) for s, i in spec.female_pool]
    return TrainingManifest(tuple(male) + tuple(female), spec)


def build_across(spec: ManifestSpec, superset: Superset) -> TrainingManifest:
    """x subjects all-CS, the remaining S - x all-FH."""
    if spec.protocol is not Protocol.ACROSS:
        raise InvalidSpec("build_across needs an across-subjects spec")
    _check(spec, superset)
    k = spec.images_per_subject
    order = _rng(spec.seed, spec.grid_point, spec.repetition, _ASSIGN_LANE).permutation(len(superset.subjects))
    cs_subjects = {superset.subjects[i] for i in order[: spec.grid_point]}
    male = []
    for s in superset.subjects:
        if s in cs_subjects:
            male += [ManifestEntry(s, i, HairLabel.CS.value) for i in _take(superset.cs[s], k, spec, s)]
        else:
            male += [ManifestEntry(s, i, HairLabel.FH.value) for i in _take(superset.fh[s], k, spec, s)]
    return _finish(spec, male)


def _take(images: Sequence[str], n: int, spec: ManifestSpec, subject: str, lane: int = 0) -> list[str]:
    if n == len(images):
        return list(images)
    rng = _rng(spec.seed, spec.grid_point, spec.repetition, _hash64(subject), lane)
    return sorted(images[i] for i in rng.choice(len(images), size=n, replace=False))


def build_within(spec: ManifestSpec, superset: Superset) -> TrainingManifest:
    """Every subject contributes x CS and k - x FH images."""
    if spec.protocol is not Protocol.WITHIN:
        raise InvalidSpec("build_within needs a within-subjects spec")
    _check(spec, superset)
    x, k = spec.grid_point, spec.images_per_subject
    male = []
    for s in superset.subjects:
        male += [ManifestEntry(s, i, HairLabel.CS.value) for i in _take(superset.cs[s], x, spec, s, 0)]
        male += [ManifestEntry(s, i, HairLabel.FH.value) for i in _take(superset.fh[s], k - x, spec, s, 1)]
    return _finish(spec, male)


def build(spec: ManifestSpec, superset: Superset) -> TrainingManifest:
    return (build_across if spec.protocol is Protocol.ACROSS else build_within)(spec, superset)


def grid_run(
    protocol: Protocol | str,
    grid: Iterable[int],
    repetitions: int,
    base_seed: int,
    superset: Superset,
    female_pool: Sequence[tuple[str, str]] = (),
    k: int | None = None,
) -> list[TrainingManifest]:
    """One manifest per (grid point, repetition), grid-major order."""
    protocol = Protocol(protocol)
    k = superset.k if k is None else k
    out = []
    for x in grid:
        for rep in range(repetitions):
            spec = ManifestSpec(protocol, x, len(superset.subjects), k, tuple(female_pool), rep, base_seed)
            out.append(build(spec, superset))
    return out
