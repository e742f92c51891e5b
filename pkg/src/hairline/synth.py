"""Synthetic cohorts with planted score structure.

Each subject gets a random unit centroid. An image embedding is the
centroid plus Gaussian noise in the centroid's tangent space, renormalized;
the noise scale is set from the target genuine cosine. FH images of a
subject additionally share an offset vector, which lowers CS-FH genuine
scores while leaving CS-CS and FH-FH genuine pairs tight.

Attribute scores, landmarks, masks and (optionally) small RGB images are
emitted alongside so every toolkit stage can run on the output.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidSpec
from .ingest import (
    AttributeScores,
    Dataset,
    DatasetManifest,
    EmbeddingStore,
    HairMask,
    ImageRecord,
    LandmarkSet,
    Sex,
    write_attributes,
    write_embeddings,
    write_landmarks,
    write_manifest,
    write_mask,
)
from .labeling import HairLabel
from .regions import frontal_template


@dataclass(frozen=True)
class SynthParams:
    subjects: int = 200
    images_per_subject: int = 24
    dim: int = 128
    cs_fraction: float = 0.5
    genuine_mu: float = 0.7
    impostor_mu: float = 0.0
    fh_offset: float = 0.0
    sigma: float = 0.1
    seed: int = 0
    cohorts: tuple[str, ...] = ("SYN",)
    female_fraction: float = 0.0
    image_size: int = 64
    landmark_jitter: float = 1.0
    with_images: bool = True

    def __post_init__(self):
        object.__setattr__(self, "cohorts", tuple(self.cohorts))
        if self.subjects < 1 or self.images_per_subject < 1 or self.dim < 2:
            raise InvalidSpec("need subjects >= 1, images >= 1, dim >= 2")
        if not 0.0 <= self.impostor_mu < self.genuine_mu < 1.0:
            raise InvalidSpec("need 0 <= impostor_mu < genuine_mu < 1")
        if not self.sigma > 0:
            raise InvalidSpec("sigma must be positive")
        if not 0.0 <= self.cs_fraction <= 1.0 or not 0.0 <= self.female_fraction <= 1.0:
            raise InvalidSpec("fractions must lie in [0, 1]")
        if self.fh_offset < 0:
            raise InvalidSpec("fh_offset must be non-negative")
        if self.image_size < 16:
            raise InvalidSpec("image_size must be at least 16")


@dataclass
class SynthCohort:
    params: SynthParams
    records: list[ImageRecord]
    embeddings: np.ndarray
    attributes: dict[str, AttributeScores]
    labels: dict[str, HairLabel]
    landmarks: dict[str, LandmarkSet]
    masks: dict[str, HairMask]
    images: dict[str, np.ndarray] = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)

    def to_dataset(self) -> Dataset:
        ids = tuple(r.image_id for r in self.records)
        store = EmbeddingStore(self.embeddings, ids)
        manifest = DatasetManifest(tuple(self.records)).with_embeddings(store)
        manifest = manifest.with_attributes(self.attributes)
        return Dataset(manifest, store, self.landmarks)

    @property
    def subject_index(self) -> dict[str, str]:
        return {r.image_id: r.subject_id for r in self.records}

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        if self.images:
            (out / "images").mkdir(exist_ok=True)
        for iid, m in self.masks.items():
            write_mask(out / "masks" / f"{iid}.png", m)
        for iid, img in self.images.items():
            Image.fromarray(img).save(out / "images" / f"{iid}.png", format="PNG")
        write_manifest(out / "manifest.csv", self.records)
        write_attributes(out / "attributes.csv", self.attributes)
        write_embeddings(out / "embeddings.emb", self.embeddings, [r.image_id for r in self.records])
        write_landmarks(out / "landmarks.csv", self.landmarks)
        meta = {"params": asdict(self.params), "calibration": self.calibration}
        (out / "synth.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return out


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _tangent_noise(rng, centers: np.ndarray) -> np.ndarray:
    """Unit-expected-norm Gaussian noise orthogonal to each row of ``centers``."""
    d = centers.shape[-1]
    g = rng.standard_normal(centers.shape) / math.sqrt(d - 1)
    return g - np.sum(g * centers, axis=-1, keepdims=True) * centers


def _attributes(rng, label: HairLabel) -> AttributeScores:
    lo = rng.uniform(0.0, 0.3, size=10)
    v = dict(zip(("no_beard", "chin", "side_to_side", "no_mustache", "mustache_connected",
                  "mustache_isolated", "five_oclock_shadow", "short", "medium", "long"), lo))
    if label is HairLabel.CS:
        v["no_beard"] = rng.uniform(0.75, 1.0)
        v["no_mustache"] = rng.uniform(0.75, 1.0)
    else:
        v[rng.choice(["chin", "side_to_side"])] = rng.uniform(0.75, 1.0)
        v[rng.choice(["mustache_connected", "mustache_isolated"])] = rng.uniform(0.75, 1.0)
        v[rng.choice(["short", "medium", "long"])] = rng.uniform(0.75, 1.0)
    return AttributeScores(**{k: float(x) for k, x in v.items()})


def chin_strip(landmarks: LandmarkSet, shape, top: float = 1.0) -> np.ndarray:
    """Rectangle over the lower face, jaw points 3..13 wide, down to the chin.

    ``top`` in [0, 1] places the upper edge between the nose base (0) and
    the lower lip (1).
    """
    p = landmarks.points
    h, w = shape
    y_top = p[33, 1] + top * (p[57, 1] - p[33, 1])
    r0 = int(np.ceil(y_top)) + 1
    r1 = int(np.floor(p[8, 1])) - 1
    c0 = int(np.ceil(p[3, 0]))
    c1 = int(np.floor(p[13, 0]))
    out = np.zeros((h, w), dtype=np.uint8)
    out[max(0, r0) : min(h, r1 + 1), max(0, c0) : min(w, c1 + 1)] = 1
    return out


def _face_image(rng, size: int, landmarks: LandmarkSet, hair: np.ndarray | None) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    cx, cy = landmarks.points[30]
    inside = ((xx - cx) / (0.42 * size)) ** 2 + ((yy - cy) / (0.55 * size)) ** 2 <= 1.0
    img = np.empty((size, size, 3), dtype=np.float64)
    img[...] = (40.0 + 60.0 * yy / size)[..., None]
    skin = rng.uniform(120, 220) * np.array([1.0, 0.82, 0.7])
    img[inside] = skin
    img += rng.normal(0.0, 6.0, size=img.shape)
    if hair is not None:
        img[hair.astype(bool)] = rng.uniform(10, 60)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_cohort(params: SynthParams) -> SynthCohort:
    p = params
    rng = np.random.default_rng(np.random.SeedSequence([p.seed & (2**64 - 1), 0x53594E]))
    d = p.dim
    # noise scale so that E[cos] between two CS images of a subject ~ genuine_mu
    sigma_w = math.sqrt(1.0 / p.genuine_mu - 1.0)
    shared = _unit(rng.standard_normal(d))

    n_cs = int(round(p.cs_fraction * p.images_per_subject))
    template = frontal_template(p.image_size, p.image_size)
    records, rows, attributes, labels, landmarks, masks, images = [], [], {}, {}, {}, {}, {}
    n_total = p.subjects * len(p.cohorts)
    n_female = int(round(p.female_fraction * n_total))
    subject_no = 0
    for cohort in p.cohorts:
        for s in range(p.subjects):
            sid = f"{cohort}_s{s:05d}"
            sex = Sex.FEMALE if subject_no < n_female else Sex.MALE
            subject_no += 1
            center = _unit(math.sqrt(p.impostor_mu) * shared + math.sqrt(1 - p.impostor_mu) * _unit(rng.standard_normal(d)))
            offset = _tangent_noise(rng, center[None, :])[0]
            offset = p.fh_offset * offset / np.linalg.norm(offset)
            base = [HairLabel.CS] * n_cs + [HairLabel.FH] * (p.images_per_subject - n_cs)
            labs = [base[i] for i in rng.permutation(len(base))]
            scale = sigma_w * np.exp(p.sigma * rng.standard_normal(len(labs)))
            noise = _tangent_noise(rng, np.repeat(center[None, :], len(labs), axis=0))
            emb = center + scale[:, None] * noise
            fh = np.array([lab is HairLabel.FH for lab in labs])
            emb[fh] += offset
            rows.append(_unit(emb))
            for j, lab in enumerate(labs):
                iid = f"{sid}_i{j:02d}"
                labels[iid] = lab
                attributes[iid] = _attributes(rng, lab)
                jitter = rng.normal(0.0, p.landmark_jitter, size=(68, 2))
                pts = np.clip(template.points + jitter, 0.0, p.image_size - 1.0)
                lm = LandmarkSet(pts)
                landmarks[iid] = lm
                mask_ref = None
                hair = None
                if lab is HairLabel.FH:
                    hair = chin_strip(lm, (p.image_size, p.image_size), rng.uniform(0.0, 1.0))
                    masks[iid] = HairMask(hair)
                    mask_ref = f"masks/{iid}.png"
                path = ""
                if p.with_images:
                    images[iid] = _face_image(rng, p.image_size, lm, hair)
                    path = f"images/{iid}.png"
                records.append(ImageRecord(iid, sid, cohort, sex, path, None, None, mask_ref))

    emb = np.vstack(rows).astype(np.float32)
    cohort = SynthCohort(p, records, emb, attributes, labels, landmarks, masks, images)
    cohort.calibration = _calibrate(cohort, sigma_w)
    return cohort


def _calibrate(cohort: SynthCohort, sigma_w: float) -> dict:
    """Empirical CS-CS genuine and impostor cosine means of the generated set."""
    x = cohort.embeddings.astype(np.float64)
    subj = np.array([r.subject_id for r in cohort.records])
    cs = np.array([cohort.labels[r.image_id] is HairLabel.CS for r in cohort.records])
    idx = np.flatnonzero(cs)[:2000]
    if len(idx) < 2:
        return {"sigma_w": sigma_w}
    sims = x[idx] @ x[idx].T
    same = subj[idx][:, None] == subj[idx][None, :]
    iu = np.triu(np.ones_like(same), k=1)
    gen = sims[same & iu]
    imp = sims[~same & iu]
    return {
        "sigma_w": sigma_w,
        "cs_genuine_mean": float(gen.mean()) if gen.size else None,
        "impostor_mean": float(imp.mean()) if imp.size else None,
    }


def planted_pair_cohort(
    subjects: int, dim: int, genuine_mu: float, genuine_sigma: float, seed: int, cohort: str = "PLANT"
) -> SynthCohort:
    """Two CS images per subject whose cosine is drawn from N(genuine_mu, genuine_sigma).

    First images are independent random unit vectors, so impostor cosines
    have mean 0 and standard deviation 1/sqrt(dim).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x504C4E]))
    a = _unit(rng.standard_normal((subjects, dim)))
    perp = _tangent_noise(rng, a)
    perp = perp / np.linalg.norm(perp, axis=1, keepdims=True)
    cos = np.clip(rng.normal(genuine_mu, genuine_sigma, size=subjects), -1.0, 1.0)
    b = cos[:, None] * a + np.sqrt(1.0 - cos**2)[:, None] * perp
    emb = np.empty((2 * subjects, dim))
    emb[0::2], emb[1::2] = a, b
    records, attributes, labels = [], {}, {}
    cs = AttributeScores.from_mapping({"no_beard": 1.0, "no_mustache": 1.0})
    for s in range(subjects):
        for j in range(2):
            iid = f"{cohort}_s{s:05d}_i{j}"
            records.append(ImageRecord(iid, f"{cohort}_s{s:05d}", cohort, Sex.MALE))
            attributes[iid] = cs
            labels[iid] = HairLabel.CS
    params = SynthParams(subjects=subjects, images_per_subject=2, dim=dim, cs_fraction=1.0, seed=seed, cohorts=(cohort,), with_images=False)
    return SynthCohort(params, records, emb.astype(np.float32), attributes, labels, {}, {}, {}, {"planted_genuine_cos": cos.tolist()})
