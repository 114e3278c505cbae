import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rqfedrec.data import (
    DataError,
    InteractionDataset,
    SemanticVectors,
    inject_click_noise,
    load_dataset,
    load_semantic_vectors,
    partition_clients,
    sample_negatives,
    save_semantic_vectors,
    split_dataset,
    split_sizes,
    synthesize_semantic_vectors,
)

ML100K = "data/ml-100k/u.data"


def keyset(pairs):
    return {(int(u), int(i)) for u, i in pairs}


def test_three_line_file(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text("a\tx\t5\nb\tx\t3\na\ty\t1\n")
    ds = load_dataset(path)
    assert (ds.n_users, ds.n_items, len(ds.train)) == (2, 2, 3)
    assert ds.user_tokens == ["a", "b"]
    assert all(x.label == 1 for x in ds.interactions())


def test_numeric_tokens_sort_numerically(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text("10 7 1\n2 100 1\n")
    ds = load_dataset(path)
    assert ds.user_tokens == ["2", "10"] and ds.item_tokens == ["7", "100"]
    assert keyset(ds.train) == {(1, 0), (0, 1)}


def test_bad_line_reports_line_number(tmp_path):
    lines = [f"{u}\t{u}\t1" for u in range(6)] + ["7\t3\tnot-a-number"]
    path = tmp_path / "bad.tsv"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=":7:"):
        load_dataset(path)


def test_short_line_and_empty_file(tmp_path):
    (tmp_path / "short.tsv").write_text("1\t2\n")
    with pytest.raises(DataError, match=":1:"):
        load_dataset(tmp_path / "short.tsv")
    (tmp_path / "empty.tsv").write_text("\n")
    with pytest.raises(DataError, match="no interactions"):
        load_dataset(tmp_path / "empty.tsv")
    with pytest.raises(DataError, match="not found"):
        load_dataset(tmp_path / "missing.tsv")


def test_duplicates_collapse(tmp_path, caplog):
    path = tmp_path / "dup.tsv"
    path.write_text("1\t1\t1\n1\t1\t4\n2\t1\t1\n")
    with caplog.at_level(logging.WARNING):
        ds = load_dataset(path)
    assert len(ds.train) == 2
    assert "duplicate" in caplog.text


@pytest.mark.skipif(not __import__("os").path.exists(ML100K), reason="ML-100k not prepared")
def test_ml100k_counts_and_split():
    ds = load_dataset(ML100K)
    assert (ds.n_users, ds.n_items, len(ds.train)) == (943, 1682, 100000)
    counts = np.bincount(ds.train[:, 0])
    expected_test = sum(split_sizes(int(c))[2] for c in counts)
    split = split_dataset(ds, seed=0)
    assert len(split.test) == expected_test
    assert abs(len(split.test) - 20000) < 943
    assert len(split.train) + len(split.val) + len(split.test) == 100000
    part = partition_clients(split, 100, seed=0)
    assert {len(v) for v in part.partition.values()} == {9, 10}


@pytest.mark.parametrize("count,expected", [(10, (7, 1, 2)), (1, (1, 0, 0)), (2, (1, 0, 1)),
                                            (5, (4, 0, 1)), (20, (14, 2, 4)), (0, (0, 0, 0))])
def test_split_sizes(count, expected):
    assert split_sizes(count) == expected


@given(st.integers(2, 500))
def test_split_sizes_keep_train(count):
    n_train, n_val, n_test = split_sizes(count)
    assert n_train >= 1 and n_train + n_val + n_test == count
    assert n_test == count - max(1, math.floor(0.8 * count))


def random_dataset(draw_pairs, n_users, n_items):
    pairs = np.unique(np.array(draw_pairs, dtype=np.int64).reshape(-1, 2), axis=0)
    return InteractionDataset(n_users=n_users, n_items=n_items, train=pairs)


pair_lists = st.lists(st.tuples(st.integers(0, 11), st.integers(0, 19)), min_size=1, max_size=150)


@settings(max_examples=60, deadline=None)
@given(pair_lists, st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_split_and_partition_properties(pairs, seed, n_clients):
    ds = random_dataset(pairs, 12, 20)
    split = split_dataset(ds, seed)
    tr, va, te = keyset(split.train), keyset(split.val), keyset(split.test)
    assert not (tr & va) and not (tr & te) and not (va & te)
    assert tr | va | te == keyset(ds.train)
    users_with_two = {u for u, c in enumerate(np.bincount(ds.train[:, 0], minlength=12)) if c >= 2}
    assert users_with_two <= {u for u, _ in tr}
    active = np.unique(ds.train[:, 0])
    n_clients = min(n_clients, 12)
    part = partition_clients(split, n_clients, seed)
    owners = np.concatenate(list(part.partition.values()))
    assert sorted(owners.tolist()) == list(range(12))
    locals_ = [keyset(part.client_train(k)) for k in range(n_clients)]
    assert set().union(*locals_) == tr
    assert sum(len(x) for x in locals_) == len(tr)
    assert len(active) >= 1


def test_split_is_deterministic_and_rejects_resplit(tiny_tsv):
    ds = load_dataset(tiny_tsv)
    a, b = split_dataset(ds, 3), split_dataset(ds, 3)
    for name in ("train", "val", "test"):
        np.testing.assert_array_equal(a.split(name), b.split(name))
    assert not np.array_equal(a.test, split_dataset(ds, 4).test)
    with pytest.raises(DataError):
        split_dataset(a, 0)


def test_user_without_interactions_is_excluded(caplog):
    ds = InteractionDataset(n_users=3, n_items=4, train=np.array([[0, 1], [0, 2], [2, 3]]))
    with caplog.at_level(logging.WARNING):
        split = split_dataset(ds, 0)
    assert "excluded 1 users" in caplog.text
    assert 1 not in set(np.concatenate([split.train, split.val, split.test])[:, 0].tolist())


def test_partition_edge_cases(tiny_tsv):
    ds = split_dataset(load_dataset(tiny_tsv), 0)
    one = partition_clients(ds, 1, 0)
    np.testing.assert_array_equal(one.partition[0], np.arange(ds.n_users))
    with pytest.raises(DataError):
        partition_clients(ds, ds.n_users + 1, 0)
    with pytest.raises(DataError):
        partition_clients(ds, 0, 0)


def test_semantic_vectors_roundtrip_and_reorder(tmp_path):
    path = tmp_path / "items.tsv"
    path.write_text("1\t30\t1\n1\t4\t1\n2\t17\t1\n")
    ds = load_dataset(path)
    assert ds.item_tokens == ["4", "17", "30"]
    vec = tmp_path / "sem.txt"
    vec.write_text("3 2\n30 30\n4 4\n17 17\n")
    (tmp_path / "sem.txt.items").write_text("30\n4\n17\n")
    sv = load_semantic_vectors(vec, ds)
    np.testing.assert_array_equal(sv.matrix[:, 0], [4, 17, 30])
    out = tmp_path / "copy.txt"
    save_semantic_vectors(out, sv)
    np.testing.assert_array_equal(load_semantic_vectors(out).matrix, sv.matrix)


def test_semantic_vector_errors(tmp_path):
    vec = tmp_path / "sem.txt"
    vec.write_text("2 2\n1 2\nnan 3\n")
    with pytest.raises(DataError, match="non-finite"):
        load_semantic_vectors(vec)
    vec.write_text("3 2\n1 2\n3 4\n")
    with pytest.raises(DataError):
        load_semantic_vectors(vec)
    ds = InteractionDataset(n_users=1, n_items=5)
    vec.write_text("2 2\n1 2\n3 4\n")
    with pytest.raises(DataError):
        load_semantic_vectors(vec, ds)
    with pytest.raises(DataError):
        SemanticVectors(np.array([[1.0, np.inf]]))


def test_synthetic_vectors_reproducible():
    a = synthesize_semantic_vectors(10, 4, seed=1)
    np.testing.assert_array_equal(a.matrix, synthesize_semantic_vectors(10, 4, seed=1).matrix)
    assert a.matrix.shape == (10, 4)


def client_dataset(pairs, n_users=2, n_items=8):
    ds = InteractionDataset(n_users=n_users, n_items=n_items, train=np.array(pairs, dtype=np.int64),
                            is_split=True)
    return partition_clients(ds, 1, seed=0)


def test_negatives_count_and_exclusion():
    ds = client_dataset([[0, 1], [0, 2], [0, 3]])
    neg = sample_negatives(ds, 0, 1, np.random.default_rng(0))
    assert neg.shape == (3, 3)
    assert not set(neg[:, 1].tolist()) & {1, 2, 3}
    assert (neg[:, 2] == 0).all()
    ds10 = client_dataset([[1, i] for i in range(10)], n_items=30)
    neg = sample_negatives(ds10, 0, 4, np.random.default_rng(0))
    assert len(neg) == 40 and (neg[:, 1] >= 10).all()
    np.testing.assert_array_equal(neg, sample_negatives(ds10, 0, 4, np.random.default_rng(0)))
    with pytest.raises(DataError):
        sample_negatives(ds, 0, 0, np.random.default_rng(0))


def test_negatives_skip_saturated_user(caplog):
    ds = client_dataset([[0, i] for i in range(4)] + [[1, 0]], n_items=4)
    with caplog.at_level(logging.WARNING):
        neg = sample_negatives(ds, 0, 2, np.random.default_rng(0))
    assert "every item" in caplog.text
    assert set(neg[:, 0].tolist()) == {1} and len(neg) == 2


@settings(max_examples=40, deadline=None)
@given(pair_lists, st.integers(1, 5), st.integers(0, 1000))
def test_negatives_never_hit_positives(pairs, ratio, seed):
    ds = client_dataset(np.unique(np.array(pairs).reshape(-1, 2), axis=0), n_users=12, n_items=20)
    neg = sample_negatives(ds, 0, ratio, np.random.default_rng(seed))
    assert not keyset(neg[:, :2]) & keyset(ds.train)


def test_click_noise(tiny_tsv):
    ds = split_dataset(load_dataset(tiny_tsv), 0)
    assert inject_click_noise(ds, 0.0, np.random.default_rng(0)) is ds
    noisy = inject_click_noise(ds, 0.10, np.random.default_rng(0))
    added = keyset(noisy.train) - keyset(ds.train)
    assert len(noisy.train) - len(ds.train) == math.ceil(0.10 * len(ds.train)) == len(added)
    assert not added & (keyset(ds.val) | keyset(ds.test))
    with pytest.raises(DataError):
        inject_click_noise(ds, 1.5, np.random.default_rng(0))


def test_click_noise_ten_percent_of_100k():
    users = np.repeat(np.arange(1000), 100)
    items = np.tile(np.arange(100), 1000)
    ds = InteractionDataset(n_users=1000, n_items=500, train=np.stack([users, items], 1), is_split=True)
    noisy = inject_click_noise(ds, 0.10, np.random.default_rng(0))
    assert len(noisy.train) - len(ds.train) == 10000
