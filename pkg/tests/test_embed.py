import numpy as np
import pytest

from mlad.dataset import Window
from mlad.embed import (EmbeddingTable, build_matrix, build_table, fuse_tables, hash_embed,
                        import_vectors, loads_vectors)
from mlad.errors import ConfigError, DataError, LookupMissError
from mlad.logparse import Template, TemplateStore


def store(n=3):
    return TemplateStore(Template(k, [f"word{k}", "<*>", f"tail{k}"]) for k in range(n))


def test_import_three_vectors():
    text = "#dim 4\n0\t1 0 0 0\n1\t0 1 0 0\n2\t0 0 1 0.5\n"
    t = loads_vectors(text, store())
    assert len(t) == 3 and t.dim == 4 and t.source == "imported"
    np.testing.assert_array_equal(t.vectors[2], [0, 0, 1, 0.5])


def test_import_missing_key_is_named():
    s = TemplateStore([Template(0, ["a"]), Template(7, ["b"])])
    with pytest.raises(DataError, match=r"\[7\]"):
        loads_vectors("#dim 2\n0\t1 2\n", s)


def test_import_errors(tmp_path):
    with pytest.raises(DataError):
        loads_vectors("0\t1 2\n")
    with pytest.raises(DataError, match="line 2"):
        loads_vectors("#dim 3\n0\t1 2\n")
    with pytest.raises(DataError):
        loads_vectors("#dim 1\n0\tnan\n")
    with pytest.raises(DataError):
        import_vectors(tmp_path / "none.tsv")


def test_export_import_roundtrip(tmp_path, rng):
    t = EmbeddingTable(5, {k: rng.normal(size=5) for k in range(4)})
    p = tmp_path / "v.tsv"
    t.export(p)
    back = import_vectors(p)
    assert back.dumps() == t.dumps()
    for k in range(4):
        assert back.vectors[k].tobytes() == t.vectors[k].tobytes()


def test_hash_embed_deterministic_and_normalised():
    a = hash_embed(["disk", "failure", "<*>"], 32)
    b = hash_embed(Template(9, ["disk", "failure", "<*>"]), 32)
    assert a.tobytes() == b.tobytes()
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)


def test_hash_embed_all_wildcards_is_zero():
    assert not hash_embed(["<*>", "<*>"], 16).any()


def test_hash_embed_small_dim():
    with pytest.raises(ConfigError):
        hash_embed(["a"], 4)


def test_shared_token_raises_cosine(rng):
    vocab = [f"w{i}" for i in range(400)]

    def pick(k):
        return list(rng.choice(vocab, size=k, replace=False))

    shared, disjoint = [], []
    for _ in range(200):
        a, b = pick(3), pick(3)
        if set(a) & set(b):
            continue
        disjoint.append(hash_embed(a, 64) @ hash_embed(b, 64))
        shared.append(hash_embed(a + ["exception"], 64) @ hash_embed(b + ["exception"], 64))
    assert len(shared) >= 100
    assert np.mean(shared) > np.mean(disjoint)


def test_build_matrix_rows_and_permutation():
    t = build_table(store(), 16)
    m = build_matrix(Window((2, 0), 0), t)
    assert m.shape == (2, 16)
    np.testing.assert_array_equal(m[0], t.vectors[2])
    np.testing.assert_array_equal(build_matrix([0, 2], t), m[::-1])


def test_build_matrix_default_shape():
    t = build_table(store(3), 100)
    assert build_matrix([0, 1, 2, 1] * 5, t).shape == (20, 100)


def test_build_matrix_missing_key():
    with pytest.raises(LookupMissError, match="99"):
        build_matrix([0, 99], build_table(store(), 8))


def test_table_rejects_bad_vectors():
    with pytest.raises(DataError):
        EmbeddingTable(3, {0: np.ones(4)})
    with pytest.raises(DataError):
        EmbeddingTable(2, {0: np.array([1.0, np.inf])})


def test_fuse_tables():
    ta, tb = build_table(store(2), 8), build_table(store(3), 8)
    keymap = {("A", 0): 0, ("A", 1): 1, ("B", 0): 2, ("B", 1): 3, ("B", 2): 4}
    fused = fuse_tables({"A": ta, "B": tb}, keymap)
    assert len(fused) == 5
    np.testing.assert_array_equal(fused.vectors[4], tb.vectors[2])
    with pytest.raises(DataError):
        fuse_tables({"A": ta, "B": build_table(store(), 16)}, keymap)
