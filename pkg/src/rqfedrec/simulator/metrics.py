"""Top-K ranking metrics against the full item set."""
from __future__ import annotations

import logging
import math

import numpy as np

from ..data import InteractionDataset
from ..model import MfModel

logger = logging.getLogger(__name__)


def _group(pairs: np.ndarray) -> dict[int, np.ndarray]:
    if len(pairs) == 0:
        return {}
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    users, starts = np.unique(pairs[:, 0], return_index=True)
    return dict(zip(users.tolist(), np.split(pairs[:, 1], starts[1:])))


def rank_metrics(topk: np.ndarray, relevant: np.ndarray, K: int) -> tuple[float, float, float]:
    """Recall, MRR and NDCG of one ranked list against a relevant set."""
    hits = np.isin(topk[:K], relevant)
    n_rel = min(K, len(relevant))
    recall = hits.sum() / n_rel
    if not hits.any():
        return float(recall), 0.0, 0.0
    first = int(np.argmax(hits))
    dcg = 0.0
    for pos in np.flatnonzero(hits).tolist():
        dcg += 1.0 / math.log2(pos + 2)
    idcg = 0.0
    for pos in range(n_rel):
        idcg += 1.0 / math.log2(pos + 2)
    return float(recall), 1.0 / (first + 1), dcg / idcg


def evaluate(models: list[MfModel], ds: InteractionDataset, split: str = "test", K: int = 10) -> dict:
    """Macro-averaged Recall@K, MRR@K and NDCG@K over users with held-out items.

    Each user is scored by the model that holds it. Items the user already has
    in train (and val, when scoring test) are excluded from the ranking. Ties in
    score are broken toward the lower item id.
    """
    if split not in ("val", "test"):
        raise ValueError(f"split must be 'val' or 'test', got {split!r}")
    targets = _group(ds.split(split))
    if not targets:
        raise ValueError(f"{split} split is empty")
    seen = _group(ds.train if split == "val" else np.concatenate([ds.train, ds.val]))

    per_user = {}
    for model in models:
        users = np.array([u for u in model.user_ids.tolist() if u in targets], dtype=np.int64)
        if len(users) == 0:
            continue
        scores = model.user_table[model.user_rows(users)] @ model.item_table.T
        for row, u in enumerate(users.tolist()):
            masked = seen.get(u)
            if masked is not None:
                scores[row, masked] = -np.inf
        order = np.argsort(-scores, axis=1, kind="stable")[:, :K]
        for row, u in enumerate(users.tolist()):
            per_user[u] = rank_metrics(order[row], targets[u], K)

    skipped = len(set(targets) - set(per_user))
    if skipped:
        logger.warning("%d users with %s items are held by no model; skipped", skipped, split)
    if not per_user:
        raise ValueError("no evaluable users")
    values = np.array([per_user[u] for u in sorted(per_user)])
    recall, mrr, ndcg = (float(sum(values[:, j].tolist()) / len(values)) for j in range(3))
    return {"recall": recall, "mrr": mrr, "ndcg": ndcg, "n_users": len(values), "skipped": skipped}
