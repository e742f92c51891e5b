import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from hairline.errors import (
    BadMagic,
    DuplicateId,
    InvalidMask,
    MissingField,
    NonFiniteValue,
    OutOfRangeScore,
    ParseError,
    TruncatedPayload,
    WrongPointCount,
)
from hairline.ingest import (
    ATTRIBUTE_NAMES,
    AttributeScores,
    ImageRecord,
    LandmarkSet,
    Sex,
    load_attributes,
    load_dataset,
    load_embeddings,
    load_landmarks,
    load_manifest,
    load_mask,
    write_attributes,
    write_embeddings,
    write_landmarks,
    write_manifest,
)

HEADER = "image_id,subject_id,cohort,sex,path\n"


def test_manifest_three_rows(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "a,s1,AAM,male,a.png\nb,s1,AAM,male,b.png\nc,s2,CM,female,c.png\n")
    m = load_manifest(p)
    assert len(m) == 3
    assert m["c"].sex is Sex.FEMALE
    assert m.cohorts == {"AAM", "CM"}


def test_manifest_duplicate_id(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "a,s1,AAM,male,a.png\na,s2,AAM,male,b.png\n")
    with pytest.raises(DuplicateId):
        load_manifest(p)


def test_manifest_empty_file(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("")
    assert len(load_manifest(p)) == 0


def test_manifest_missing_column_and_bad_row(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("image_id,subject_id,cohort,path\na,s,C,x\n")
    with pytest.raises(MissingField):
        load_manifest(p)
    p.write_text(HEADER + "a,s,C,male\n")
    with pytest.raises(ParseError):
        load_manifest(p)
    p.write_text(HEADER + "a,s,C,robot,x\n")
    with pytest.raises(ParseError):
        load_manifest(p)


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(8))))
def test_manifest_order_independent(tmp_path_factory, perm):
    d = tmp_path_factory.mktemp("perm")
    recs = [ImageRecord(f"i{j}", f"s{j // 3}", "AAM", Sex.MALE, f"i{j}.png") for j in range(8)]
    write_manifest(d / "a.csv", recs)
    write_manifest(d / "b.csv", [recs[j] for j in perm])
    a, b = load_manifest(d / "a.csv"), load_manifest(d / "b.csv")
    assert set(a.records) == set(b.records)


def test_embeddings_small(tmp_path):
    p = tmp_path / "e.emb"
    p.write_bytes(b"EMB1" + struct.pack("<II", 2, 4) + np.arange(8, dtype="<f4").tobytes())
    store = load_embeddings(p)
    assert (store.count, store.dim) == (2, 4)
    assert store.ids is None
    np.testing.assert_array_equal(store.data[1], [4, 5, 6, 7])


def test_embeddings_errors(tmp_path):
    p = tmp_path / "e.emb"
    p.write_bytes(b"EMB1" + struct.pack("<II", 2, 512) + np.zeros(100, dtype="<f4").tobytes())
    with pytest.raises(TruncatedPayload):
        load_embeddings(p)
    p.write_bytes(b"EMB2" + struct.pack("<II", 1, 1) + np.zeros(1, dtype="<f4").tobytes())
    with pytest.raises(BadMagic):
        load_embeddings(p)
    p.write_bytes(b"EMB1" + struct.pack("<II", 1, 2) + np.array([1.0, np.nan], dtype="<f4").tobytes())
    with pytest.raises(NonFiniteValue):
        load_embeddings(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 6), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_embeddings_round_trip_bit_identical(tmp_path_factory, n, dim, seed):
    data = np.random.default_rng(seed).standard_normal((n, dim)).astype(np.float32)
    p = tmp_path_factory.mktemp("emb") / "e.emb"
    write_embeddings(p, data, [f"x{i}" for i in range(n)])
    store = load_embeddings(p)
    assert store.data.tobytes() == data.tobytes()
    assert store.ids == tuple(f"x{i}" for i in range(n))


def test_unit_norm_flag():
    from hairline.ingest import EmbeddingStore

    assert EmbeddingStore(np.eye(3)).unit_norm
    assert not EmbeddingStore(2 * np.eye(3)).unit_norm


def test_landmarks(tmp_path):
    pts = np.stack([np.arange(68.0), np.arange(68.0) / 2], axis=1)
    p = tmp_path / "l.csv"
    write_landmarks(p, {"a": LandmarkSet(pts)})
    got = load_landmarks(p)
    np.testing.assert_array_equal(got["a"].points, pts)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-1]) + "\n")  # drop landmark 67
    with pytest.raises(WrongPointCount):
        load_landmarks(p)
    with pytest.raises(WrongPointCount):
        LandmarkSet(np.zeros((67, 2)))


def test_masks(tmp_path):
    p = tmp_path / "m.png"
    Image.fromarray(np.zeros((10, 12), np.uint8)).save(p)
    m = load_mask(p)
    assert m.hair_pixels == 0 and (m.height, m.width) == (10, 12)
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(p)
    with pytest.raises(InvalidMask):
        load_mask(p)


def test_attributes(tmp_path):
    p = tmp_path / "a.csv"
    a = AttributeScores.from_mapping({"no_beard": 0.9, "long": 0.25})
    write_attributes(p, {"x": a})
    assert load_attributes(p)["x"] == a
    with pytest.raises(OutOfRangeScore):
        AttributeScores.from_mapping({"chin": 1.5})
    p.write_text("image_id," + ",".join(ATTRIBUTE_NAMES) + "\nx" + ",oops" * 10 + "\n")
    with pytest.raises(ParseError):
        load_attributes(p)


def test_dataset_from_written_cohort(tmp_path, small_cohort):
    small_cohort.write(tmp_path)
    ds = load_dataset(tmp_path / "manifest.csv", tmp_path / "embeddings.emb", tmp_path / "attributes.csv", tmp_path / "landmarks.csv")
    assert len(ds.manifest) == len(small_cohort.records)
    assert ds.embeddings.unit_norm
    iid = small_cohort.records[0].image_id
    np.testing.assert_array_equal(ds.embedding(iid), small_cohort.embeddings[0])
    assert ds.image(iid).shape == (48, 48, 3)
    fh = next(i for i, lab in small_cohort.labels.items() if lab.value == "FH")
    np.testing.assert_array_equal(ds.mask(fh).bitmap, small_cohort.masks[fh].bitmap)
