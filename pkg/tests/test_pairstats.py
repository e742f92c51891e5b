import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hairline.errors import DegenerateDistribution, DimensionMismatch, EmptyDataset, ZeroVector
from hairline.ingest import Dataset, DatasetManifest, EmbeddingStore, ImageRecord
from hairline.labeling import HairLabel
from hairline.pairstats import (
    GROUPS,
    KINDS,
    AuditReport,
    PairClass,
    PairGroup,
    PairKind,
    StreamStats,
    accumulate,
    audit,
    cosine_similarity,
    count_pairs,
    dprime,
    merge,
)
from oracles import brute_count, brute_force_audit

finite = st.floats(-1.0, 1.0, allow_nan=False)


def stats_of(values):
    s = StreamStats()
    for v in values:
        s = accumulate(s, v)
    return s


def make_dataset(vectors, subjects, labels, cohorts=None):
    n = len(vectors)
    cohorts = cohorts or ["C"] * n
    ids = [f"img{i:04d}" for i in range(n)]
    recs = tuple(ImageRecord(ids[i], subjects[i], cohorts[i]) for i in range(n))
    store = EmbeddingStore(np.asarray(vectors, dtype=np.float32), tuple(ids))
    ds = Dataset(DatasetManifest(recs).with_embeddings(store), store)
    return ds, dict(zip(ids, labels))


# -- cosine -----------------------------------------------------------------


def test_cosine_examples():
    assert cosine_similarity([1, 0, 0], [1, 0, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(0.70710678, abs=1e-6)
    with pytest.raises(ZeroVector):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(DimensionMismatch):
        cosine_similarity([1, 0], [1, 0, 0])


# -- pair counts ------------------------------------------------------------


def test_count_pairs_two_subjects():
    labels = {"a1": HairLabel.CS, "a2": HairLabel.CS, "a3": HairLabel.FH,
              "b1": HairLabel.CS, "b2": HairLabel.CS, "b3": HairLabel.FH}
    subj = {i: i[0] for i in labels}
    want = {
        (PairKind.GENUINE, PairGroup.CSCS): 2,
        (PairKind.GENUINE, PairGroup.CSFH): 4,
        (PairKind.GENUINE, PairGroup.FHFH): 0,
        (PairKind.IMPOSTOR, PairGroup.CSCS): 4,
        (PairKind.IMPOSTOR, PairGroup.CSFH): 4,
        (PairKind.IMPOSTOR, PairGroup.FHFH): 1,
    }
    for (k, g), n in want.items():
        assert count_pairs(labels, subj, PairClass(k, g)) == n


def test_count_pairs_degenerate():
    one = {"a": HairLabel.CS, "b": HairLabel.FH, "c": HairLabel.CS}
    subj = {i: "s" for i in one}
    for g in GROUPS:
        assert count_pairs(one, subj, PairClass(PairKind.IMPOSTOR, g)) == 0
    excl = {i: HairLabel.EXCLUDED for i in one}
    for g in GROUPS:
        for k in KINDS:
            assert count_pairs(excl, subj, PairClass(k, g)) == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.sampled_from(list(HairLabel))), max_size=14))
def test_count_pairs_matches_enumeration(spec):
    labels = {f"i{j}": lab for j, (_, lab) in enumerate(spec)}
    subj = {f"i{j}": f"s{s}" for j, (s, _) in enumerate(spec)}
    items = [(i, subj[i], labels[i].value) for i in labels]
    for g in GROUPS:
        for k in KINDS:
            assert count_pairs(labels, subj, PairClass(k, g)) == brute_count(items, g.value, k.value)


# -- streaming stats --------------------------------------------------------


def test_accumulate_and_merge_examples():
    s = stats_of([1, 2, 3])
    assert (s.n, s.mean, s.variance) == (3, 2.0, 1.0)
    assert merge(stats_of([1, 2]), stats_of([3])).equals(s)
    m = merge(s, StreamStats())
    assert (m.n, m.mean, m.m2) == (s.n, s.mean, s.m2)
    assert np.array_equal(m.histogram, s.histogram)
    m = merge(StreamStats(), s)
    assert (m.n, m.mean, m.m2) == (s.n, s.mean, s.m2)


@given(st.lists(finite, max_size=40), st.lists(finite, max_size=40))
def test_merge_equals_sequential(a, b):
    seq = stats_of(a + b)
    m = merge(stats_of(a), stats_of(b))
    assert m.n == seq.n
    assert math.isclose(m.mean, seq.mean, rel_tol=1e-9, abs_tol=1e-12)
    assert math.isclose(m.m2, seq.m2, rel_tol=1e-9, abs_tol=1e-12)
    assert np.array_equal(m.histogram, seq.histogram)
    assert m.histogram.sum() == m.n


def test_histogram_edges():
    s = stats_of([-1.0, 1.0, 0.0])
    assert s.histogram[0] == 1 and s.histogram[511] == 1 and s.histogram[256] == 1


# -- d-prime ----------------------------------------------------------------


def test_dprime_examples():
    assert dprime(stats_of([0.8, 0.9]), stats_of([0.1, 0.2])) == pytest.approx(0.7 / math.sqrt(0.005), abs=1e-6)
    assert dprime(stats_of([0.8, 0.9]), stats_of([0.1, 0.2])) == pytest.approx(9.8995, abs=1e-4)
    assert dprime(stats_of([0.1, 0.3]), stats_of([0.1, 0.3])) == 0.0
    with pytest.raises(DegenerateDistribution):
        dprime(stats_of([0.8, 0.9]), stats_of([0.5]))
    with pytest.raises(DegenerateDistribution):
        dprime(stats_of([0.5, 0.5]), stats_of([0.2, 0.2]))


pair_lists = st.lists(st.floats(-0.9, 0.9, allow_nan=False), min_size=2, max_size=30).filter(
    lambda v: np.var(v) > 1e-6
)


@given(pair_lists, pair_lists, st.floats(0.05, 0.9), st.floats(-0.05, 0.05))
def test_dprime_affine_invariant(gen, imp, a, b):
    d0 = dprime(stats_of(gen), stats_of(imp))
    d1 = dprime(stats_of([a * x + b for x in gen]), stats_of([a * x + b for x in imp]))
    assert math.isclose(d0, d1, rel_tol=1e-9, abs_tol=1e-9)


@given(pair_lists, pair_lists)
def test_dprime_antisymmetric(gen, imp):
    assert dprime(stats_of(gen), stats_of(imp)) == pytest.approx(-dprime(stats_of(imp), stats_of(gen)), abs=1e-12)


# -- audit ------------------------------------------------------------------


def assert_matches_oracle(report, ds, labels, tol=1e-9):
    recs = [(r.image_id, r.subject_id, r.cohort) for r in ds.manifest]
    vecs = {r.image_id: ds.embedding(r.image_id) for r in ds.manifest}
    oracle = brute_force_audit(recs, vecs, {k: v.value for k, v in labels.items()})
    for cohort, cells in oracle.items():
        got = report.cohorts[cohort]
        assert len(got.cells) == len(cells)
        for (g, k), (n, mean, var, hist) in cells.items():
            s = got.cell(PairGroup(g), PairKind(k))
            assert s.n == n
            assert abs(s.mean - mean) <= tol
            if n > 1:
                assert abs(s.variance - var) <= tol
            assert s.histogram.tolist() == hist
            assert s.histogram.sum() == s.n


def test_audit_matches_brute_force_small(rng):
    n = 10
    vecs = rng.standard_normal((n, 5))
    subjects = ["a", "a", "a", "b", "b", "b", "c", "c", "d", "d"]
    labels = [HairLabel.CS, HairLabel.FH, HairLabel.CS, HairLabel.FH, HairLabel.FH,
              HairLabel.CS, HairLabel.EXCLUDED, HairLabel.CS, HairLabel.FH, HairLabel.CS]
    ds, labs = make_dataset(vecs, subjects, labels)
    assert_matches_oracle(audit(ds, labs, threads=1), ds, labs)


def test_audit_tiles_and_threads_match_oracle(rng):
    n = 90
    vecs = rng.standard_normal((n, 7))
    subjects = [f"s{i % 17}" for i in range(n)]
    labels = [HairLabel(rng.choice(["CS", "FH", "Excluded"])) for _ in range(n)]
    cohorts = ["AAM" if i % 3 else "CM" for i in range(n)]
    ds, labs = make_dataset(vecs, subjects, labels, cohorts)
    ref = audit(ds, labs, threads=1, tile=1024)
    assert_matches_oracle(ref, ds, labs)
    for threads, tile in ((1, 8), (3, 8), (4, 13)):
        rep = audit(ds, labs, threads=threads, tile=tile)
        assert_matches_oracle(rep, ds, labs)
    assert audit(ds, labs, threads=1, tile=8).to_json() == audit(ds, labs, threads=4, tile=8).to_json()


def test_audit_pair_counts_conserved(small_cohort):
    ds = small_cohort.to_dataset()
    rep = audit(ds, small_cohort.labels, threads=1)
    for cohort in ("AAM", "CM"):
        ids = {r.image_id for r in small_cohort.records if r.cohort == cohort}
        labs = {i: small_cohort.labels[i] for i in ids}
        for g in GROUPS:
            for k in KINDS:
                s = rep.cohorts[cohort].cell(g, k)
                n = 0 if s is None else s.n
                assert n == count_pairs(labs, small_cohort.subject_index, PairClass(k, g))


def test_audit_without_fh_images(rng):
    vecs = rng.standard_normal((6, 4))
    ds, labs = make_dataset(vecs, ["a", "a", "b", "b", "c", "c"], [HairLabel.CS] * 6)
    cr = audit(ds, labs).cohorts["C"]
    assert cr.cell(PairGroup.CSCS, PairKind.GENUINE).n == 3
    assert cr.cell(PairGroup.CSFH, PairKind.GENUINE) is None
    assert cr.cell(PairGroup.FHFH, PairKind.IMPOSTOR) is None
    assert set(cr.dprime) == {PairGroup.CSCS}


def test_audit_cohort_filter_and_empty(small_cohort):
    ds = small_cohort.to_dataset()
    assert set(audit(ds, small_cohort.labels, "CM").cohorts) == {"CM"}
    with pytest.raises(EmptyDataset):
        audit(ds, {i: HairLabel.EXCLUDED for i in small_cohort.labels})


def test_report_json_round_trip(small_cohort, tmp_path):
    rep = audit(small_cohort.to_dataset(), small_cohort.labels, run={"protocol": "within", "grid_point": 3})
    p = tmp_path / "r.json"
    p.write_text(rep.to_json())
    back = AuditReport.load(p)
    assert back.to_json() == rep.to_json()


def test_impostor_sampling_is_seeded(small_cohort):
    ds = small_cohort.to_dataset()
    a = audit(ds, small_cohort.labels, impostor_sample=50, seed=3)
    b = audit(ds, small_cohort.labels, impostor_sample=50, seed=3)
    assert a.to_json() == b.to_json()
    full = audit(ds, small_cohort.labels)
    for cohort, cr in a.cohorts.items():
        for g in GROUPS:
            gen = cr.cell(g, PairKind.GENUINE)
            if gen is not None:
                assert gen.equals(full.cohorts[cohort].cell(g, PairKind.GENUINE))
            imp = cr.cell(g, PairKind.IMPOSTOR)
            assert imp is None or imp.n == 50
    assert a.impostor_sample == 50 and a.seed == 3
