import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepmovesort import formats
from deepmovesort.formats import FormatError
from deepmovesort.geometry import AffineTransform, BoundingBox
from deepmovesort.tracker import TrackRecord
from deepmovesort.transfilter import TransFilter, TransFilterConfig


def write(tmp_path, text, name="f.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_detection_line(tmp_path):
    d = formats.read_detections(write(tmp_path, "1,-1,10,20,30,40,0.9,-1,-1,-1\n"))
    assert d == {0: [BoundingBox(10, 20, 30, 40, 0.9)]}


def test_empty_file(tmp_path):
    assert formats.read_detections(write(tmp_path, "")) == {}


def test_grouping_and_order(tmp_path):
    text = "".join(f"1,-1,{x},0,5,5,0.9,-1,-1,-1\n" for x in (30, 10, 20))
    text += "".join(f"2,-1,{x},0,5,5,0.9,-1,-1,-1\n" for x in (7, 3))
    d = formats.read_detections(write(tmp_path, text))
    assert [len(d[0]), len(d[1])] == [3, 2]
    assert [b.x_left for b in d[0]] == [30, 10, 20]


@pytest.mark.parametrize("line", [
    "1,-1,10,20,-30,40,0.9,-1,-1,-1",
    "1,-1,10,20,30,nan,0.9,-1,-1,-1",
    "1,-1,10,inf,30,40,0.9,-1,-1,-1",
    "1,-1,10,abc,30,40,0.9,-1,-1,-1",
    "0,-1,10,20,30,40,0.9,-1,-1,-1",
    "1,-1,10,20",
])
def test_malformed_rows_name_the_line(tmp_path, line):
    p = write(tmp_path, "1,-1,1,1,5,5,0.5,-1,-1,-1\n" + line + "\n")
    with pytest.raises(FormatError, match=":2:"):
        formats.read_detections(p)


def test_results_format_and_sort(tmp_path):
    recs = [TrackRecord(4, 2, BoundingBox(1.234, 2, 3, 4, 0.5)), TrackRecord(0, 7, BoundingBox(10, 20, 30, 40, 0.9)),
            TrackRecord(4, 1, BoundingBox(5, 6, 7, 8, 1.0))]
    text = formats.format_results(recs)
    assert text.splitlines() == [
        "1,7,10.00,20.00,30.00,40.00,0.90,-1,-1,-1",
        "5,1,5.00,6.00,7.00,8.00,1.00,-1,-1,-1",
        "5,2,1.23,2.00,3.00,4.00,0.50,-1,-1,-1",
    ]
    assert formats.format_results(recs[::-1]) == text
    with pytest.raises(ValueError):
        formats.format_results([TrackRecord(0, 0, BoundingBox(0, 0, 1, 1))])


records = st.lists(st.builds(
    TrackRecord, st.integers(0, 50), st.integers(1, 20),
    st.builds(BoundingBox, st.floats(-100, 1000), st.floats(-100, 1000), st.floats(1, 300), st.floats(1, 300),
              st.floats(0, 1))), max_size=20, unique_by=lambda r: (r.frame, r.id))


@given(records)
def test_results_round_trip(recs):
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "r.txt"
        formats.write_results(p, recs)
        first = p.read_bytes()
        formats.write_results(p, list(reversed(recs)))
        assert p.read_bytes() == first
        back = formats.read_results(p) if recs else {}
    got = {(f, i): b for f, items in back.items() for i, b in items}
    for r in recs:
        if r.box.confidence < 0.005:
            continue     # written as 0.00, which marks an ignored row on read
        np.testing.assert_allclose(got[(r.frame, r.id)].tlwh(), r.box.tlwh(), atol=0.0051)


def test_clip_to_image():
    recs = [TrackRecord(0, 1, BoundingBox(-10, 5, 30, 10)), TrackRecord(0, 2, BoundingBox(200, 5, 30, 10))]
    assert formats.format_results(recs, clip_to=(100, 100)).splitlines() == ["1,1,0.00,5.00,20.00,10.00,1.00,-1,-1,-1"]


def test_ground_truth_skips_ignored_rows(tmp_path):
    gt = formats.read_ground_truth(write(tmp_path, "1,3,0,0,5,5,1,1,1\n1,4,0,0,5,5,0,1,1\n"))
    assert [tid for tid, _ in gt[0]] == [3]
    tracks = formats.read_tracks(write(tmp_path, "2,3,1,0,5,5,1\n1,3,0,0,5,5,1\n", "t.txt"))
    np.testing.assert_array_equal(tracks[3][0], [0, 1])


def test_embeddings_binary_round_trip(tmp_path, rng):
    emb = {0: rng.normal(size=(3, 8)), 4: rng.normal(size=(1, 8)), 5: np.zeros((0, 8))}
    emb = {f: v / np.linalg.norm(v, axis=1, keepdims=True) if len(v) else v for f, v in emb.items()}
    p = tmp_path / "e.bin"
    formats.write_embeddings(p, emb)
    data = p.read_bytes()
    magic, version, dim, count = struct.unpack_from("<8sIIQ", data)
    assert (magic, version, dim, count) == (b"DMSEMB01", 1, 8, 4)
    assert len(data) == 24 + 4 * (8 + 32)
    back = formats.read_embeddings(p)
    assert sorted(back) == [0, 4]
    np.testing.assert_allclose(back[0], emb[0], atol=1e-6)


def test_embedding_normalized_on_load(tmp_path):
    back = formats.read_embeddings(write(tmp_path, "1,0,2,0,0\n1,1,0,0,3\n"))
    np.testing.assert_allclose(back[0], [[1, 0, 0], [0, 0, 1]])


def test_embedding_dim_mismatch_names_both(tmp_path):
    with pytest.raises(FormatError, match="4.*3|3.*4"):
        formats.read_embeddings(write(tmp_path, "1,0,1,0,0\n1,1,1,0,0,0\n"))


def test_embedding_errors(tmp_path):
    with pytest.raises(FormatError):
        formats.read_embeddings(write(tmp_path, "1,0,0,0,0\n"))
    with pytest.raises(FormatError):
        formats.read_embeddings(write(tmp_path, "1,1,1,0,0\n"))
    p = tmp_path / "bad.bin"
    p.write_bytes(struct.pack("<8sIIQ", b"DMSEMB01", 1, 4, 2) + b"\0" * 10)
    with pytest.raises(FormatError):
        formats.read_embeddings(p)


def test_cmc_reading(tmp_path):
    t = formats.read_cmc(write(tmp_path, "2,1,0,5,0,1,-3\n"))
    assert t[1] == AffineTransform(1, 0, 5, 0, 1, -3)
    assert t[0].is_identity() and t.get(7).is_identity()
    with pytest.raises(FormatError, match=":1:"):
        formats.read_cmc(write(tmp_path, "2,1,2,0,2,4,0\n", "s.txt"))
    with pytest.raises(FormatError):
        formats.read_cmc(write(tmp_path, "2,1,0,5,0,1\n", "short.txt"))


def test_cmc_round_trip(tmp_path):
    table = {3: AffineTransform(0.99, -0.01, 2.5, 0.01, 0.99, -1.25)}
    formats.write_cmc(tmp_path / "c.txt", table)
    assert formats.read_cmc(tmp_path / "c.txt")[3] == table[3]


def test_model_round_trip(tmp_path):
    cfg = TransFilterConfig(d_model=8, n_heads=2, n_layers=1, history=4, horizon=3, ff_dim=16)
    m = TransFilter(cfg, seed=5)
    for k in m.params:
        m.params[k] = m.params[k].astype(np.float32).astype(np.float64)
    p = tmp_path / "m.bin"
    formats.save_model(p, m)
    back = formats.load_model(p)
    assert back.cfg == cfg and back.stats.to_dict() == m.stats.to_dict()
    for k in m.params:
        np.testing.assert_array_equal(back.params[k], m.params[k])
    formats.save_model(tmp_path / "m2.bin", back)
    assert (tmp_path / "m2.bin").read_bytes() == p.read_bytes()


def test_model_errors(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOTAMODEL")
    with pytest.raises(FormatError):
        formats.load_model(p)
    m = TransFilter(TransFilterConfig(d_model=8, n_heads=2, n_layers=1, history=4, horizon=3, ff_dim=16))
    formats.save_model(p, m)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError):
        formats.load_model(p)
