import json
import math
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from trackreid.data import TrackletRecord, read_manifest, write_manifest
from trackreid.errors import FormatError
from trackreid.formats import (
    dump_embeddings,
    dump_weights,
    load_embeddings,
    load_weights,
    read_frame_scores,
    read_json,
    read_pairs,
    write_frame_scores,
    write_json,
    write_pairs,
)
from trackreid.reid import GroupingPartition, PairScore
from trackreid.synthetic import SyntheticConfig, generate_dataset


def test_weights_layout():
    blob = dump_weights({"b": np.array([[1.5]]), "a": np.array([[1.0, 2.0]])})
    assert blob[:4] == b"TRW1" and struct.unpack_from("<I", blob, 4)[0] == 1
    # names are sorted: "a" comes first
    assert struct.unpack_from("<I", blob, 8)[0] == 1 and blob[12:13] == b"a"
    assert struct.unpack_from("<II", blob, 13) == (1, 2)
    assert struct.unpack_from("<2f", blob, 21) == (1.0, 2.0)
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4])


@given(st.dictionaries(st.text("abcxyz.", min_size=1, max_size=8),
                       st.tuples(st.integers(1, 4), st.integers(1, 4)), max_size=5),
       st.integers(0, 1000))
def test_weights_roundtrip(shapes, seed):
    rng = np.random.default_rng(seed)
    params = {k: rng.standard_normal(s).astype(np.float32) for k, s in shapes.items()}
    back = load_weights(dump_weights(params), dtype=np.float32)
    assert set(back) == set(params)
    assert all(np.array_equal(back[k], params[k]) for k in params)


def test_weights_corruption_detected():
    blob = bytearray(dump_weights({"w": np.ones((2, 2))}))
    blob[14] ^= 1
    with pytest.raises(FormatError, match="checksum"):
        load_weights(bytes(blob))
    with pytest.raises(FormatError, match="magic"):
        load_weights(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(FormatError):
        load_weights(bytes(blob[:6]))


def test_weights_reject_non_matrix():
    with pytest.raises(FormatError):
        dump_weights({"v": np.ones(3)})


def test_embeddings_roundtrip_and_layout():
    ids = ["p0-t00", "p0-t01", "ü"]
    emb = np.arange(6, dtype=np.float32).reshape(3, 2)
    blob = dump_embeddings(ids, emb)
    assert blob[:4] == b"EMB1" and struct.unpack_from("<III", blob, 4) == (1, 3, 2)
    got_ids, got = load_embeddings(blob)
    assert got_ids == ids and np.array_equal(got, emb)
    with pytest.raises(FormatError):
        load_embeddings(blob[:-5] + blob[-4:])
    with pytest.raises(FormatError):
        dump_embeddings(["a"], emb)


def test_pair_csv_roundtrip(tmp_path):
    pairs = [PairScore("a", "b", "same", 0.1 + 0.2), PairScore("a", "c", "unknown", -1e-300)]
    write_pairs(tmp_path / "p.csv", pairs)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "tracklet_a,tracklet_b,label,score"
    assert read_pairs(tmp_path / "p.csv") == pairs


def test_pair_csv_rejects_bad_rows(tmp_path):
    (tmp_path / "p.csv").write_text("tracklet_a,tracklet_b,label,score\na,b,maybe,0.3\n")
    with pytest.raises(FormatError):
        read_pairs(tmp_path / "p.csv")
    (tmp_path / "q.csv").write_text("x,y\n")
    with pytest.raises(FormatError):
        read_pairs(tmp_path / "q.csv")


def test_frame_scores_roundtrip(tmp_path):
    scores = {"t1": np.array([0.25, 1 / 3]), "t0": np.array([0.0])}
    idx = {"t1": np.array([4, 9]), "t0": np.array([2])}
    write_frame_scores(tmp_path / "f.csv", scores, idx)
    back = read_frame_scores(tmp_path / "f.csv")
    assert back == {"t0": {2: 0.0}, "t1": {4: 0.25, 9: 1 / 3}}


def test_manifest_roundtrip_exact(tmp_path):
    tr, _ = generate_dataset(SyntheticConfig(procedures=2, seed=9))
    write_manifest(tmp_path / "d.jsonl", tr)
    back = read_manifest(tmp_path / "d.jsonl")
    for a, b in zip(tr, back):
        assert (a.tracklet_id, a.procedure_id, a.entity_id) == (b.tracklet_id, b.procedure_id, b.entity_id)
        for f in ("frame_index", "timestamp", "confidence", "features"):
            assert np.array_equal(getattr(a, f), getattr(b, f))


def test_manifest_without_labels(tmp_path):
    tr, _ = generate_dataset(SyntheticConfig(procedures=1, seed=9))
    write_manifest(tmp_path / "d.jsonl", tr, labels=False)
    assert all(t.entity_id is None for t in read_manifest(tmp_path / "d.jsonl"))


def test_manifest_rejects_malformed(tmp_path):
    (tmp_path / "d.jsonl").write_text('{"tracklet_id": "a"}\n')
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "d.jsonl")
    (tmp_path / "e.jsonl").write_text("{not json\n")
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "e.jsonl")


def test_record_requires_increasing_frames():
    with pytest.raises(FormatError):
        TrackletRecord("a", "p", [0, 0], [0, 0], [1, 1], np.zeros((2, 1)))


def test_partition_json_roundtrip(tmp_path):
    part = GroupingPartition({"g0": ["a", "b"], "g1": ["c"]}, 0.123456789012345678, "mv_joint")
    write_json(tmp_path / "p.json", part.to_json())
    assert GroupingPartition.from_json(read_json(tmp_path / "p.json")) == part


def test_json_nonfinite_becomes_null(tmp_path):
    write_json(tmp_path / "x.json", {"a": math.inf, "b": [math.nan, 1.0]})
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": None, "b": [None, 1.0]}
