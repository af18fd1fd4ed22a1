import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlad import dataset as ds
from mlad.errors import ConfigError, DataError


def recs(n, anomalous=()):
    return ds.make_records(list(range(n)), [int(i in anomalous) for i in range(n)])


def test_make_records_misaligned():
    with pytest.raises(DataError, match="3 labels for 2 keys"):
        ds.make_records([1, 2], [0, 0, 0])


def test_sessionize_groups_by_block_id():
    texts = ["recv blk_1", "ack blk_1", "recv blk_2", "done blk_1", "ack blk_2"]
    r = ds.make_records([0, 1, 0, 2, 1], texts=texts)
    tagged, dropped = ds.sessionize(r, r"(blk_-?\d+)")
    windows = ds.windowize(tagged, ds.SplitSpec(mode="session"), "hdfs")
    assert dropped == 0
    assert sorted(len(w) for w in windows) == [2, 3]
    assert {w.session_id for w in windows} == {"blk_1", "blk_2"}


def test_sessionize_drops_lines_without_id(caplog):
    r = ds.make_records([0, 1, 2], texts=["a blk_1", "no id here", "b blk_1"])
    with caplog.at_level(logging.WARNING):
        tagged, dropped = ds.sessionize(r, r"blk_-?\d+")
    assert dropped == 1 and len(tagged) == 2
    assert any("dropped 1" in m for m in caplog.messages)


def test_sessionize_no_match_at_all():
    with pytest.raises(ConfigError):
        ds.sessionize(ds.make_records([0], texts=["nothing"]), r"blk_\d+")


def test_hdfs_mini_corpus_session_count():
    ids = ["blk_-5", "blk_7", "blk_-5", "blk_9", "blk_7", "blk_9", "blk_7"]
    r = ds.make_records(list(range(len(ids))), texts=[f"x {b} y" for b in ids])
    tagged, _ = ds.sessionize(r, r"(blk_-?\d+)")
    labelled = ds.apply_session_labels(tagged, {"blk_-5": 0, "blk_7": 1, "blk_9": 0})
    windows = ds.windowize(labelled, ds.SplitSpec(mode="session"))
    assert len(windows) == len(set(ids))
    assert {w.session_id: w.label for w in windows} == {"blk_-5": 0, "blk_7": 1, "blk_9": 0}


def test_session_labels_missing_session():
    r = [ds.LogRecord(0, 0, session_id="blk_1")]
    with pytest.raises(DataError, match="blk_1"):
        ds.apply_session_labels(r, {})


def test_single_record_sessions_are_skipped():
    r = [ds.LogRecord(0, 0, session_id="a"), ds.LogRecord(1, 0, session_id="b"),
         ds.LogRecord(2, 1, session_id="b")]
    windows = ds.windowize(r, ds.SplitSpec(mode="session"))
    assert [w.session_id for w in windows] == ["b"]


def test_long_session_truncated():
    r = [ds.LogRecord(i, 0, session_id="s") for i in range(600)]
    assert len(ds.windowize(r, ds.SplitSpec(mode="session"))[0]) == ds.MAX_SESSION_LEN


@pytest.mark.parametrize("n,sizes", [(40, [20, 20]), (45, [20, 20, 5]), (41, [20, 20])])
def test_sliding_window_counts(n, sizes):
    assert [len(w) for w in ds.windowize(recs(n), ds.SplitSpec())] == sizes


def test_window_label_rule():
    windows = ds.windowize(recs(20, anomalous={7}), ds.SplitSpec())
    assert len(windows) == 1 and windows[0].label == ds.ANOMALOUS


def test_bad_split_spec():
    with pytest.raises(ConfigError):
        ds.SplitSpec(mode="tumbling")
    with pytest.raises(ConfigError):
        ds.SplitSpec(window_size=1)


def _windows(n_norm, n_anom, origin=""):
    return ([ds.Window((i, i + 1), 0, origin) for i in range(n_norm)]
            + [ds.Window((-i, 0), 1, origin) for i in range(1, n_anom + 1)])


def test_split_sizes():
    train, test = ds.split(_windows(100, 10), seed=0)
    assert len(train) == 90 and all(w.label == 0 for w in train)
    assert len(test) == 20 and sum(w.label for w in test) == 10


def test_split_without_anomalies():
    w = _windows(12, 0)
    train, test = ds.split(w, 0)
    assert test == [] and train == w


def test_split_seeding():
    w = _windows(100, 10)
    assert ds.split(w, 5) == ds.split(w, 5)
    a, b = ds.split(w, 1)[1], ds.split(w, 2)[1]
    assert len(a) == len(b) and a != b


def test_split_cannot_balance():
    with pytest.raises(DataError):
        ds.split(_windows(2, 3), 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 2 ** 31))
def test_split_partitions(n_norm, n_anom, seed):
    if n_norm < n_anom:
        return
    w = _windows(n_norm, n_anom)
    train, test = ds.split(w, seed)
    assert sorted(map(id, train + test)) == sorted(map(id, w))
    assert sum(x.label for x in test) * 2 == len(test)


def test_fuse_counts_and_namespacing():
    a = _windows(8, 2, "A")
    b = _windows(4, 1, "B")
    fused, keymap = ds.fuse({"A": a, "B": b}, seed=0)
    assert len(fused) == 15 and ds.origin_counts(fused) == {"A": 10, "B": 5}
    # key 1 appears in both systems but must map to two distinct fused keys
    assert keymap[("A", 1)] != keymap[("B", 1)]
    train, test = ds.split(fused, 0)
    assert sum(w.label for w in test) == 3 and len(test) == 6 and len(train) == 9


def test_fuse_single_dataset_is_shuffle():
    a = _windows(6, 1, "A")
    fused, keymap = ds.fuse({"A": a}, seed=3)
    inv = {v: k for (_, k), v in keymap.items()}
    back = sorted((tuple(inv[k] for k in w.keys), w.label) for w in fused)
    assert back == sorted((w.keys, w.label) for w in a)


def test_fuse_rejects_mislabelled_origin():
    with pytest.raises(DataError):
        ds.fuse({"A": _windows(2, 0, "B")})


def test_windows_file_roundtrip(tmp_path):
    w = _windows(3, 1, "A") + [ds.Window((1, 2, 3), 1, "H", "blk_5")]
    p = tmp_path / "w.tsv"
    ds.save_windows(w, p)
    assert ds.load_windows(p) == w


def test_windows_file_errors(tmp_path):
    p = tmp_path / "w.tsv"
    p.write_text("A\t2\t1,2\n")
    with pytest.raises(DataError, match="line 1"):
        ds.load_windows(p)
    with pytest.raises(DataError):
        ds.load_windows(tmp_path / "missing.tsv")


def test_label_files(tmp_path):
    p = tmp_path / "l.txt"
    p.write_text("0\n1\nanomaly\nnormal\n")
    assert ds.load_line_labels(p) == [0, 1, 1, 0]
    c = tmp_path / "s.csv"
    c.write_text("BlockId,Label\nblk_1,Normal\nblk_2,Anomaly\n")
    assert ds.load_session_labels(c) == {"blk_1": 0, "blk_2": 1}
    p.write_text("0\nmaybe\n")
    with pytest.raises(DataError, match="maybe"):
        ds.load_line_labels(p)
