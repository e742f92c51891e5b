"""Genuine/impostor similarity statistics stratified by facial-hair pair group.

Pairs are enumerated inside each cohort. A pair falls into one of six cells:
its group (CS-CS, CS-FH, FH-FH, from the two images' labels) crossed with
its kind (genuine when both images share a subject, impostor otherwise).
Each cell keeps a mergeable running mean/variance plus a 512-bin histogram,
and d-prime is computed per group from the genuine and impostor cells.

The all-pairs audit walks the upper triangle of the cohort's similarity
matrix in fixed-size tiles. Tiles are independent, so they run on a thread
pool; partial results are merged in a fixed binary-tree order, which makes
the report bit-identical for any thread count.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateDistribution, DimensionMismatch, EmptyDataset, MissingField, ZeroVector
from .ingest import Dataset
from .labeling import HairLabel

log = logging.getLogger(__name__)

N_BINS = 512
TILE = 1024


class PairGroup(str, Enum):
    CSCS = "CSCS"
    CSFH = "CSFH"
    FHFH = "FHFH"

    @property
    def display(self) -> str:
        return {"CSCS": "CS-CS", "CSFH": "CS-FH", "FHFH": "FH-FH"}[self.value]


class PairKind(str, Enum):
    GENUINE = "genuine"
    IMPOSTOR = "impostor"


@dataclass(frozen=True)
class PairClass:
    kind: PairKind
    group: PairGroup

    @property
    def cell(self) -> int:
        return cell_index(self.group, self.kind)


GROUPS = tuple(PairGroup)
KINDS = tuple(PairKind)
N_CELLS = len(GROUPS) * len(KINDS)


def cell_index(group: PairGroup, kind: PairKind) -> int:
    # group code is the number of FH images in the pair; genuine=0, impostor=1
    return GROUPS.index(group) * 2 + KINDS.index(kind)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("HAIRLINE_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


# -- scalar similarity ------------------------------------------------------


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"vectors have dimensions {a.size} and {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(min(1.0, max(-1.0, np.dot(a, b) / (na * nb))))


def histogram_bin(scores):
    """Bin index in 512 uniform bins over [-1, 1]; the last bin includes 1."""
    idx = np.floor((np.asarray(scores, dtype=np.float64) + 1.0) * (N_BINS / 2.0)).astype(np.int64)
    return np.clip(idx, 0, N_BINS - 1)


# -- streaming statistics ---------------------------------------------------


@dataclass
class StreamStats:
    """Running count, mean and sum of squared deviations, plus a histogram."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    histogram: np.ndarray = field(default_factory=lambda: np.zeros(N_BINS, dtype=np.int64))

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n >= 2 else math.nan

    @property
    def std(self) -> float:
        return math.sqrt(self.variance) if self.n >= 2 else math.nan

    def copy(self) -> "StreamStats":
        return StreamStats(self.n, self.mean, self.m2, self.histogram.copy())

    def push(self, score: float) -> None:
        score = float(score)
        self.n += 1
        delta = score - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (score - self.mean)
        self.histogram[histogram_bin(score)] += 1

    def push_many(self, scores) -> None:
        xs = np.asarray(scores, dtype=np.float64).ravel()
        if xs.size == 0:
            return
        mean = float(xs.mean())
        batch = StreamStats(
            int(xs.size),
            mean,
            float(np.square(xs - mean).sum()),
            np.bincount(histogram_bin(xs), minlength=N_BINS).astype(np.int64),
        )
        merged = merge(self, batch)
        self.n, self.mean, self.m2, self.histogram = merged.n, merged.mean, merged.m2, merged.histogram

    def equals(self, other: "StreamStats", rtol: float = 1e-9) -> bool:
        return (
            self.n == other.n
            and math.isclose(self.mean, other.mean, rel_tol=rtol, abs_tol=rtol)
            and math.isclose(self.m2, other.m2, rel_tol=rtol, abs_tol=rtol)
            and bool(np.array_equal(self.histogram, other.histogram))
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "m2": self.m2,
            "variance": None if self.n < 2 else self.variance,
            "histogram": self.histogram.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StreamStats":
        hist = np.asarray(d.get("histogram") or np.zeros(N_BINS), dtype=np.int64)
        return cls(int(d["n"]), float(d["mean"]), float(d["m2"]), hist)


def accumulate(stats: StreamStats, score: float) -> StreamStats:
    """Return a copy of ``stats`` with one more score (Welford update)."""
    out = stats.copy()
    out.push(score)
    return out


def merge(s1: StreamStats, s2: StreamStats) -> StreamStats:
    """Combine two disjoint streams (Chan et al. pairwise update)."""
    if s2.n == 0:
        return s1.copy()
    if s1.n == 0:
        return s2.copy()
    n = s1.n + s2.n
    delta = s2.mean - s1.mean
    mean = s1.mean + delta * s2.n / n
    m2 = s1.m2 + s2.m2 + delta * delta * s1.n * s2.n / n
    return StreamStats(n, mean, m2, s1.histogram + s2.histogram)


def dprime(genuine: StreamStats, impostor: StreamStats) -> float:
    if genuine.n < 2 or impostor.n < 2:
        raise DegenerateDistribution(f"need at least 2 scores per side, got {genuine.n} and {impostor.n}")
    pooled = (genuine.variance + impostor.variance) / 2.0
    if not pooled > 0.0:
        raise DegenerateDistribution("pooled variance is zero")
    return (genuine.mean - impostor.mean) / math.sqrt(pooled)


def dprime_or_none(genuine: StreamStats | None, impostor: StreamStats | None) -> float | None:
    if genuine is None or impostor is None:
        return None
    try:
        return dprime(genuine, impostor)
    except DegenerateDistribution:
        return None


# -- vectorised six-cell partials -------------------------------------------


@dataclass
class CellPartial:
    """Stats of all six cells as parallel arrays; the unit merged across tiles."""

    n: np.ndarray
    mean: np.ndarray
    m2: np.ndarray
    hist: np.ndarray

    @classmethod
    def empty(cls) -> "CellPartial":
        return cls(
            np.zeros(N_CELLS, dtype=np.int64),
            np.zeros(N_CELLS),
            np.zeros(N_CELLS),
            np.zeros((N_CELLS, N_BINS), dtype=np.int64),
        )

    @classmethod
    def from_scores(cls, cells: np.ndarray, scores: np.ndarray) -> "CellPartial":
        n = np.bincount(cells, minlength=N_CELLS)
        sums = np.bincount(cells, weights=scores, minlength=N_CELLS)
        mean = np.divide(sums, n, out=np.zeros(N_CELLS), where=n > 0)
        dev = scores - mean[cells]
        m2 = np.bincount(cells, weights=dev * dev, minlength=N_CELLS)
        hist = np.bincount(cells * N_BINS + histogram_bin(scores), minlength=N_CELLS * N_BINS)
        return cls(n.astype(np.int64), mean, m2, hist.reshape(N_CELLS, N_BINS).astype(np.int64))

    def merge(self, other: "CellPartial") -> "CellPartial":
        n = self.n + other.n
        safe = np.where(n > 0, n, 1)
        delta = other.mean - self.mean
        mean = np.where(n > 0, self.mean + delta * other.n / safe, 0.0)
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / safe
        # exact identity when one side is empty
        mean = np.where(other.n == 0, self.mean, np.where(self.n == 0, other.mean, mean))
        m2 = np.where(other.n == 0, self.m2, np.where(self.n == 0, other.m2, m2))
        return CellPartial(n, mean, m2, self.hist + other.hist)

    def stats(self, cell: int) -> StreamStats:
        return StreamStats(int(self.n[cell]), float(self.mean[cell]), float(self.m2[cell]), self.hist[cell].copy())


def tree_reduce(parts: Sequence[CellPartial]) -> CellPartial:
    """Pairwise merge in a fixed order: ((p0 p1)(p2 p3))..."""
    parts = list(parts)
    if not parts:
        return CellPartial.empty()
    while len(parts) > 1:
        nxt = [parts[i].merge(parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


# -- pair counting ----------------------------------------------------------


def _per_subject_counts(labels: Mapping[str, HairLabel], subject_index: Mapping[str, str]):
    counts: dict[str, list[int]] = {}
    for iid, lab in labels.items():
        if lab is HairLabel.EXCLUDED:
            continue
        c = counts.setdefault(subject_index[iid], [0, 0])
        c[0 if lab is HairLabel.CS else 1] += 1
    return counts.values()


def count_pairs(labels: Mapping[str, HairLabel], subject_index: Mapping[str, str], pair_class: PairClass) -> int:
    """Closed-form number of pairs in one cell; Excluded images are ignored."""
    per = list(_per_subject_counts(labels, subject_index))
    tot_cs = sum(c[0] for c in per)
    tot_fh = sum(c[1] for c in per)
    group, kind = pair_class.group, pair_class.kind
    if group is PairGroup.CSFH:
        genuine = sum(c[0] * c[1] for c in per)
        total = tot_cs * tot_fh
    else:
        j = 0 if group is PairGroup.CSCS else 1
        genuine = sum(math.comb(c[j], 2) for c in per)
        total = math.comb(tot_cs if j == 0 else tot_fh, 2)
    return genuine if kind is PairKind.GENUINE else total - genuine


# -- audit ------------------------------------------------------------------


@dataclass
class CohortReport:
    cohort: str
    cells: dict[PairClass, StreamStats]
    dprime: dict[PairGroup, float]
    n_images: dict[str, int] = field(default_factory=dict)
    n_subjects: int = 0

    def cell(self, group: PairGroup, kind: PairKind) -> StreamStats | None:
        return self.cells.get(PairClass(kind, group))

    def to_dict(self) -> dict:
        groups = {}
        for g in GROUPS:
            entry = {}
            for k in KINDS:
                s = self.cell(g, k)
                entry[k.value] = None if s is None else s.to_dict()
            entry["dprime"] = self.dprime.get(g)
            groups[g.value] = entry
        return {"n_images": self.n_images, "n_subjects": self.n_subjects, "groups": groups}

    @classmethod
    def from_dict(cls, cohort: str, d: Mapping) -> "CohortReport":
        cells, dp = {}, {}
        for g in GROUPS:
            entry = d["groups"].get(g.value) or {}
            for k in KINDS:
                if entry.get(k.value):
                    cells[PairClass(k, g)] = StreamStats.from_dict(entry[k.value])
            if entry.get("dprime") is not None:
                dp[g] = float(entry["dprime"])
        return cls(cohort, cells, dp, dict(d.get("n_images", {})), int(d.get("n_subjects", 0)))


@dataclass
class AuditReport:
    cohorts: dict[str, CohortReport]
    impostor_sample: int | None = None
    seed: int | None = None
    run: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": "hairline-audit/1",
            "impostor_sample": self.impostor_sample,
            "seed": self.seed,
            "run": self.run,
            "cohorts": {c: self.cohorts[c].to_dict() for c in sorted(self.cohorts)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "AuditReport":
        cohorts = {c: CohortReport.from_dict(c, v) for c, v in d["cohorts"].items()}
        return cls(cohorts, d.get("impostor_sample"), d.get("seed"), dict(d.get("run") or {}))

    @classmethod
    def load(cls, path) -> "AuditReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if (norms == 0).any():
        raise ZeroVector(f"{int((norms == 0).sum())} embedding rows are all zeros")
    return x / norms[:, None]


def _tile_partial(x, lab, subj, r0, r1, c0, c1) -> CellPartial:
    sims = x[r0:r1] @ x[c0:c1].T
    np.clip(sims, -1.0, 1.0, out=sims)
    cells = (lab[r0:r1, None] + lab[None, c0:c1]) * 2 + (subj[r0:r1, None] != subj[None, c0:c1])
    if r0 == c0:
        iu = np.triu_indices(r1 - r0, k=1)
        return CellPartial.from_scores(cells[iu], sims[iu])
    return CellPartial.from_scores(cells.ravel(), sims.ravel())


def _tiles(n: int, tile: int) -> list[tuple[int, int, int, int]]:
    starts = range(0, n, tile)
    return [(r, min(r + tile, n), c, min(c + tile, n)) for r in starts for c in starts if c >= r]


def _full_enumeration(x, lab, subj, threads: int, tile: int) -> CellPartial:
    tiles = _tiles(len(x), tile)
    if threads <= 1 or len(tiles) <= 1:
        parts = [_tile_partial(x, lab, subj, *t) for t in tiles]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda t: _tile_partial(x, lab, subj, *t), tiles))
    return tree_reduce(parts)


def _stable_hash(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def _sampled_enumeration(x, lab, subj, k: int, seed: int, cohort: str) -> CellPartial:
    """All genuine pairs, plus k uniformly drawn impostor pairs per group."""
    parts = []
    order = np.argsort(subj, kind="stable")
    bounds = np.flatnonzero(np.diff(subj[order])) + 1
    for members in np.split(order, bounds):
        if len(members) < 2:
            continue
        xs = x[members]
        sims = np.clip(xs @ xs.T, -1.0, 1.0)
        iu = np.triu_indices(len(members), k=1)
        la = lab[members]
        cells = (la[:, None] + la[None, :]) * 2
        parts.append(CellPartial.from_scores(cells[iu], sims[iu]))

    rng = np.random.default_rng(np.random.SeedSequence([seed, _stable_hash("impostor", cohort)]))
    cs, fh = np.flatnonzero(lab == 0), np.flatnonzero(lab == 1)
    for a_pool, b_pool in ((cs, cs), (cs, fh), (fh, fh)):
        sa, sb = set(subj[a_pool].tolist()), set(subj[b_pool].tolist())
        if not sa or not sb or (len(sa) == 1 and sa == sb):
            continue  # no cross-subject pair exists
        got_a, got_b, need = [], [], k
        for _ in range(1000):
            a = rng.choice(a_pool, size=2 * need)
            b = rng.choice(b_pool, size=2 * need)
            ok = subj[a] != subj[b]
            got_a.append(a[ok][:need])
            got_b.append(b[ok][:need])
            need -= int(min(ok.sum(), need))
            if need == 0:
                break
        a = np.concatenate(got_a)
        b = np.concatenate(got_b)
        if len(a) == 0:
            continue
        sims = np.clip(np.einsum("ij,ij->i", x[a], x[b]), -1.0, 1.0)
        cells = (lab[a] + lab[b]) * 2 + 1
        parts.append(CellPartial.from_scores(cells, sims))
    return tree_reduce(parts)


def audit(
    dataset: Dataset,
    labels: Mapping[str, HairLabel],
    cohort_filter: Iterable[str] | str | None = None,
    *,
    threads: int | None = None,
    impostor_sample: int | None = None,
    seed: int | None = None,
    tile: int = TILE,
    run: Mapping | None = None,
) -> AuditReport:
    """Score every in-scope pair of every selected cohort.

    Excluded or unlabeled images are skipped. A cell with no pairs is left
    out of the report; d-prime is reported only where it is defined.
    """
    if isinstance(cohort_filter, str):
        cohort_filter = [cohort_filter]
    wanted = set(cohort_filter) if cohort_filter else None
    if impostor_sample is not None and seed is None:
        raise MissingField("impostor subsampling requires a seed")
    threads = resolve_threads(threads)
    if dataset.embeddings is None:
        raise MissingField("audit requires embeddings")

    by_cohort: dict[str, list] = {}
    for rec in dataset.manifest:
        if wanted is not None and rec.cohort not in wanted:
            continue
        lab = labels.get(rec.image_id, HairLabel.EXCLUDED)
        if lab is HairLabel.EXCLUDED:
            continue
        if rec.embedding_ref is None:
            raise MissingField(f"image {rec.image_id!r} has no embedding row")
        by_cohort.setdefault(rec.cohort, []).append((rec.image_id, rec.subject_id, rec.embedding_ref, lab))

    cohorts = {}
    for cohort in sorted(by_cohort):
        rows = sorted(by_cohort[cohort])
        refs = np.fromiter((r[2] for r in rows), dtype=np.int64, count=len(rows))
        lab = np.fromiter((0 if r[3] is HairLabel.CS else 1 for r in rows), dtype=np.int64, count=len(rows))
        _, subj = np.unique([r[1] for r in rows], return_inverse=True)
        subj = subj.astype(np.int64)
        x = _normalize_rows(dataset.embeddings.data[refs])

        if impostor_sample is None:
            total = _full_enumeration(x, lab, subj, threads, tile)
        else:
            total = _sampled_enumeration(x, lab, subj, int(impostor_sample), int(seed), cohort)

        cells = {}
        for g in GROUPS:
            for k in KINDS:
                c = cell_index(g, k)
                if total.n[c] > 0:
                    cells[PairClass(k, g)] = total.stats(c)
        dps = {}
        for g in GROUPS:
            d = dprime_or_none(cells.get(PairClass(PairKind.GENUINE, g)), cells.get(PairClass(PairKind.IMPOSTOR, g)))
            if d is not None:
                dps[g] = d
        n_images = {"CS": int((lab == 0).sum()), "FH": int((lab == 1).sum())}
        cohorts[cohort] = CohortReport(cohort, cells, dps, n_images, int(subj.max()) + 1 if len(subj) else 0)
        log.info("cohort %s: %d images, %d pairs", cohort, len(rows), int(total.n.sum()))

    if not any(c.cells for c in cohorts.values()):
        raise EmptyDataset("no labeled image pairs to audit")
    return AuditReport(cohorts, impostor_sample, seed if impostor_sample is not None else None, dict(run or {}))
