"""Matrix-factorization backbone: dot-product scoring, BCE loss, Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

EPS = 1e-7
INIT_STD = 0.01


class ModelError(RuntimeError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class MfModel:
    """User/item embedding tables.

    ``user_ids`` lists the global ids of the users this model holds, in row
    order of ``user_table``. ``item_table`` always covers every item.
    """

    user_ids: np.ndarray
    user_table: np.ndarray
    item_table: np.ndarray

    @classmethod
    def init(cls, user_ids, n_items: int, d: int, rng: np.random.Generator,
             std: float = INIT_STD) -> "MfModel":
        user_ids = np.asarray(user_ids, dtype=np.int64)
        return cls(
            user_ids=user_ids,
            user_table=rng.normal(0.0, std, size=(len(user_ids), d)),
            item_table=rng.normal(0.0, std, size=(n_items, d)),
        )

    @property
    def d(self) -> int:
        return self.item_table.shape[1]

    @property
    def n_items(self) -> int:
        return self.item_table.shape[0]

    def user_rows(self, user_ids) -> np.ndarray:
        user_ids = np.asarray(user_ids, dtype=np.int64)
        rows = np.searchsorted(self.user_ids, user_ids)
        rows = np.minimum(rows, len(self.user_ids) - 1)
        if len(self.user_ids) == 0 or np.any(self.user_ids[rows] != user_ids):
            raise ModelError("user not held by this model")
        return rows


def predict(model: MfModel, user_id: int, item_id: int) -> float:
    u = model.user_table[model.user_rows([user_id])[0]]
    return float(sigmoid(u @ model.item_table[item_id]))


def score_users(model: MfModel, user_ids) -> np.ndarray:
    """Raw dot-product scores of the given users against every item."""
    return model.user_table[model.user_rows(user_ids)] @ model.item_table.T


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = np.clip(probs, EPS, 1.0 - EPS)
    return -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))


def bce_gradients(model: MfModel, batch: np.ndarray):
    """Mean BCE of ``(user, item, label)`` rows and its table gradients.

    Returns ``(loss, grad_user_table, grad_item_table)`` with dense gradients of
    the batch mean. The gradient is that of the unclamped loss, which coincides
    with the clamped one whenever predictions stay inside ``[EPS, 1 - EPS]``.
    """
    rows = model.user_rows(batch[:, 0])
    items = batch[:, 1]
    labels = batch[:, 2].astype(np.float64)
    u = model.user_table[rows]
    v = model.item_table[items]
    probs = sigmoid((u * v).sum(1))
    loss = float(bce_loss(probs, labels).mean())
    g = ((probs - labels) / len(batch))[:, None]
    grad_u = np.zeros_like(model.user_table)
    grad_i = np.zeros_like(model.item_table)
    np.add.at(grad_u, rows, g * v)
    np.add.at(grad_i, items, g * u)
    return loss, grad_u, grad_i


@dataclass
class Adam:
    """Adam over a list of arrays, updated in place; ``weight_decay`` is L2 added to the gradient."""

    lr: float = 1e-3
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        b1, b2 = self.betas
        step_size = self.lr / (1.0 - b1 ** self.step_count)
        inv_bias2 = 1.0 / np.sqrt(1.0 - b2 ** self.step_count)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if not p.flags.c_contiguous:
                raise ModelError("Adam parameters must be C-contiguous")
            _adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                         m.reshape(-1), v.reshape(-1), b1, b2, step_size, inv_bias2,
                         self.eps, self.weight_decay)

    def reset(self) -> None:
        self.step_count = 0
        self.m, self.v = [], []


@njit(cache=True, error_model="numpy")
def _adam_update(p, g, m, v, b1, b2, step_size, inv_bias2, eps, weight_decay):
    # One fused pass in textbook operation order. The numpy error model drops the
    # per-element zero-division check, which is what lets the loop vectorize.
    for k in range(p.size):
        gk = g[k] + weight_decay * p[k] if weight_decay != 0.0 else g[k]
        mk = b1 * m[k] + gk * (1.0 - b1)
        vk = b2 * v[k] + (gk * gk) * (1.0 - b2)
        m[k] = mk
        v[k] = vk
        p[k] -= (mk / (np.sqrt(vk) * inv_bias2 + eps)) * step_size


# OptimizerState in the model contract is this Adam instance.
OptimizerState = Adam


def train_epoch(model: MfModel, opt: Adam, examples: np.ndarray, rng: np.random.Generator,
                batch_size: int = 256) -> float:
    """One shuffled pass of minibatch Adam over ``(user, item, label)`` rows.

    Returns the example-weighted mean BCE seen during the pass.
    """
    if len(examples) == 0:
        return 0.0
    order = rng.permutation(len(examples))
    total = 0.0
    for start in range(0, len(order), batch_size):
        batch = examples[order[start:start + batch_size]]
        loss, gu, gi = bce_gradients(model, batch)
        if not np.isfinite(loss):
            raise ModelError(f"non-finite loss at batch starting {start}; "
                             f"max |user|={np.abs(model.user_table).max():.3g}, "
                             f"max |item|={np.abs(model.item_table).max():.3g}")
        opt.step([model.user_table, model.item_table], [gu, gi])
        total += loss * len(batch)
    return total / len(examples)


def get_item_table(model: MfModel) -> np.ndarray:
    return model.item_table.copy()


def set_item_table(model: MfModel, new_table) -> None:
    new_table = np.asarray(new_table, dtype=np.float64)
    if new_table.shape != model.item_table.shape:
        raise ModelError(f"item table shape {new_table.shape} != {model.item_table.shape}")
    model.item_table[...] = new_table
