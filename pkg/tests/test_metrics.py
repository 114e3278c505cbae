import math

import numpy as np
import pytest

import oracles
from rqfedrec.data import InteractionDataset
from rqfedrec.model import MfModel
from rqfedrec.simulator.metrics import evaluate, rank_metrics


def one_user(scores, train=(), test=(), val=()):
    n = len(scores)
    ds = InteractionDataset(
        n_users=1, n_items=n,
        train=np.array([[0, i] for i in train], dtype=np.int64).reshape(-1, 2),
        val=np.array([[0, i] for i in val], dtype=np.int64).reshape(-1, 2),
        test=np.array([[0, i] for i in test], dtype=np.int64).reshape(-1, 2), is_split=True)
    model = MfModel(np.array([0]), np.array([[1.0]]), np.array(scores, dtype=float)[:, None])
    return ds, [model]


def test_perfect_ranking():
    ds, models = one_user([3.0, 1.0, 2.0], test=[0])
    assert evaluate(models, ds, "test") == {"recall": 1.0, "mrr": 1.0, "ndcg": 1.0, "n_users": 1, "skipped": 0}


def test_second_of_three():
    ds, models = one_user([3.0, 1.0, 2.0], test=[2])
    out = evaluate(models, ds, "test")
    assert out["mrr"] == 0.5 and out["recall"] == 1.0
    assert out["ndcg"] == pytest.approx(1 / math.log2(3))
    assert out["ndcg"] == pytest.approx(0.6309, abs=1e-4)


def test_masking_train_and_val():
    ds, models = one_user([5.0, 4.0, 3.0, 2.0], train=[0], val=[1], test=[2])
    assert evaluate(models, ds, "test")["mrr"] == 1.0
    assert evaluate(models, ds, "val")["mrr"] == 1.0


def test_ties_go_to_lower_item_id():
    ds, models = one_user([1.0, 1.0, 1.0], test=[1])
    assert evaluate(models, ds, "test")["mrr"] == 0.5


def test_rank_metrics_recall_denominator():
    recall, mrr, ndcg = rank_metrics(np.array([7, 1, 2]), np.array([1, 9, 8, 6]), K=2)
    assert recall == 0.5 and mrr == 0.5
    assert ndcg == pytest.approx((1 / math.log2(3)) / (1 + 1 / math.log2(3)))


def test_errors_and_skips(caplog):
    ds, models = one_user([1.0, 2.0], test=[])
    with pytest.raises(ValueError):
        evaluate(models, ds, "test")
    with pytest.raises(ValueError):
        evaluate(models, ds, "train")
    ds2 = InteractionDataset(n_users=2, n_items=3, test=np.array([[0, 1], [1, 2]]), is_split=True)
    model = MfModel(np.array([0]), np.ones((1, 2)), np.ones((3, 2)))
    out = evaluate([model], ds2, "test")
    assert out["skipped"] == 1 and out["n_users"] == 1
    assert "skipped" in caplog.text


def random_instance(rng):
    """5 users, 20 items, two client models; integer-valued tables so score ties occur."""
    n_users, n_items, K = 5, 20, 10
    train, val, test = [], [], []
    for u in range(n_users):
        items = rng.permutation(n_items)
        a, b, c = rng.integers(1, 5), rng.integers(0, 3), rng.integers(1, 6)
        train += [[u, i] for i in items[:a]]
        val += [[u, i] for i in items[a:a + b]]
        test += [[u, i] for i in items[a + b:a + b + c]]
    arr = lambda x: np.array(x, dtype=np.int64).reshape(-1, 2)  # noqa: E731
    ds = InteractionDataset(n_users, n_items, arr(train), arr(val), arr(test), is_split=True)
    items = rng.integers(-2, 3, size=(n_items, 3)).astype(float)
    users = rng.integers(-2, 3, size=(n_users, 3)).astype(float)
    models = [MfModel(np.array([0, 2, 4]), users[[0, 2, 4]], items),
              MfModel(np.array([1, 3]), users[[1, 3]], items)]
    return ds, models, users, items, K


@pytest.mark.parametrize("seed", range(50))
def test_matches_enumeration_oracle(seed):
    ds, models, users, items, K = random_instance(np.random.default_rng(seed))
    for split in ("val", "test"):
        pairs = ds.split(split)
        masked_pairs = ds.train if split == "val" else np.concatenate([ds.train, ds.val])
        per_user = []
        for u in sorted(set(pairs[:, 0].tolist())):
            relevant = pairs[pairs[:, 0] == u, 1].tolist()
            masked = set(masked_pairs[masked_pairs[:, 0] == u, 1].tolist())
            per_user.append(oracles.ranking_metrics(users[u], items, relevant, masked, K))
        expected = [sum(m[j] for m in per_user) / len(per_user) for j in range(3)]
        if not per_user:
            continue
        got = evaluate(models, ds, split, K=K)
        assert (got["recall"], got["mrr"], got["ndcg"]) == tuple(expected)
