"""Interaction datasets, per-user splits, client partitions and sampling."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

TRAIN_POOL_FRACTION = 0.8
VAL_FRACTION = 0.1


class DataError(ValueError):
    pass


class Interaction(NamedTuple):
    user_id: int
    item_id: int
    label: int


def _pairs(a=None) -> np.ndarray:
    if a is None:
        return np.empty((0, 2), dtype=np.int64)
    return np.asarray(a, dtype=np.int64).reshape(-1, 2)


@dataclass
class InteractionDataset:
    """Implicit-feedback dataset.

    ``train``/``val``/``test`` are ``(n, 2)`` int arrays of ``(user, item)``
    positives; every stored row has label 1. Before ``split_dataset`` all
    interactions sit in ``train``. ``partition`` maps a client id to the sorted
    array of user ids it owns.
    """

    n_users: int
    n_items: int
    train: np.ndarray = field(default_factory=_pairs)
    val: np.ndarray = field(default_factory=_pairs)
    test: np.ndarray = field(default_factory=_pairs)
    partition: dict[int, np.ndarray] = field(default_factory=dict)
    user_tokens: list[str] | None = None
    item_tokens: list[str] | None = None
    is_split: bool = False

    def split(self, name: str) -> np.ndarray:
        if name not in ("train", "val", "test"):
            raise KeyError(name)
        return getattr(self, name)

    def interactions(self, name: str = "train") -> Iterator[Interaction]:
        for u, i in self.split(name):
            yield Interaction(int(u), int(i), 1)

    @property
    def n_clients(self) -> int:
        return len(self.partition)

    def client_users(self, client_id: int) -> np.ndarray:
        return self.partition[client_id]

    def client_train(self, client_id: int) -> np.ndarray:
        """All train positives of the users held by ``client_id``."""
        users = self.partition[client_id]
        return self.train[np.isin(self.train[:, 0], users)]

    def pair_keys(self, name: str) -> np.ndarray:
        pairs = self.split(name)
        return pairs[:, 0] * self.n_items + pairs[:, 1]


def load_dataset(path, format: str = "tsv_triples") -> InteractionDataset:
    """Read ``user <sep> item <sep> value [...]`` lines into a dense-indexed dataset.

    Tokens are re-indexed from 0 in sorted order (numeric when every token is an
    integer). Any observed line is a positive; extra trailing columns such as
    timestamps are ignored. Repeated ``(user, item)`` pairs collapse to one.
    """
    if format != "tsv_triples":
        raise DataError(f"unsupported dataset format {format!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")

    users, items = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            parts = [p.strip() for p in parts]
            if len(parts) < 3 or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected user, item, value; got {line.rstrip()!r}")
            try:
                value = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable value {parts[2]!r}") from None
            if not math.isfinite(value):
                raise DataError(f"{path}:{lineno}: non-finite value {parts[2]!r}")
            users.append(parts[0])
            items.append(parts[1])
    if not users:
        raise DataError(f"{path}: no interactions")

    user_tokens, uidx = _dense_index(users)
    item_tokens, iidx = _dense_index(items)
    pairs = np.unique(np.stack([uidx, iidx], axis=1), axis=0)
    if len(pairs) < len(users):
        logger.warning("%s: dropped %d duplicate (user, item) rows", path, len(users) - len(pairs))
    return InteractionDataset(
        n_users=len(user_tokens),
        n_items=len(item_tokens),
        train=pairs,
        user_tokens=user_tokens,
        item_tokens=item_tokens,
    )


def _dense_index(tokens: list[str]) -> tuple[list[str], np.ndarray]:
    uniq = set(tokens)
    try:
        ordered = sorted(uniq, key=int)
    except ValueError:
        ordered = sorted(uniq)
    lookup = {tok: k for k, tok in enumerate(ordered)}
    return ordered, np.fromiter((lookup[t] for t in tokens), dtype=np.int64, count=len(tokens))


def split_sizes(count: int) -> tuple[int, int, int]:
    """(train, val, test) sizes for a user with ``count`` interactions."""
    pool = max(1, math.floor(TRAIN_POOL_FRACTION * count)) if count else 0
    test = count - pool
    val = min(int(math.floor(VAL_FRACTION * pool + 0.5)), pool - 1) if pool else 0
    return pool - val, val, test


def split_dataset(ds: InteractionDataset, seed: int) -> InteractionDataset:
    """Per-user random 8:2 train-pool/test split, then 10% of the pool to val."""
    if ds.is_split:
        raise DataError("dataset is already split")
    rng = np.random.default_rng(seed)
    pairs = ds.train[np.lexsort((ds.train[:, 1], ds.train[:, 0]))]
    bounds = np.searchsorted(pairs[:, 0], np.arange(ds.n_users + 1))

    train, val, test = [], [], []
    empty = 0
    for u in range(ds.n_users):
        rows = pairs[bounds[u]:bounds[u + 1]]
        if len(rows) == 0:
            empty += 1
            continue
        rows = rows[rng.permutation(len(rows))]
        n_train, n_val, _ = split_sizes(len(rows))
        train.append(rows[:n_train])
        val.append(rows[n_train:n_train + n_val])
        test.append(rows[n_train + n_val:])
    if empty:
        logger.warning("excluded %d users with no interactions from the split", empty)

    def cat(parts):
        out = np.concatenate(parts) if parts else _pairs()
        return out[np.lexsort((out[:, 1], out[:, 0]))]

    return replace(ds, train=cat(train), val=cat(val), test=cat(test), is_split=True)


def partition_clients(ds: InteractionDataset, n_clients: int, seed: int) -> InteractionDataset:
    """Shuffle users under ``seed`` and deal them round-robin onto clients."""
    if n_clients < 1:
        raise DataError("n_clients must be >= 1")
    if n_clients > ds.n_users:
        raise DataError(f"n_clients={n_clients} exceeds n_users={ds.n_users}")
    order = np.random.default_rng(seed).permutation(ds.n_users)
    partition = {k: np.sort(order[k::n_clients]) for k in range(n_clients)}
    return replace(ds, partition=partition)


@dataclass
class SemanticVectors:
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1:
            raise DataError(f"semantic vectors must be a non-empty matrix, got shape {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise DataError("semantic vectors contain non-finite values")

    @property
    def n_items(self) -> int:
        return self.matrix.shape[0]

    @property
    def d_sem(self) -> int:
        return self.matrix.shape[1]


def load_semantic_vectors(path, ds: InteractionDataset | None = None) -> SemanticVectors:
    """Load a ``n_items d_sem`` header + rows text file.

    If ``<path>.items`` exists and ``ds`` carries item tokens, rows are reordered
    to the dataset's dense item ids; otherwise rows are taken as already dense.
    """
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: header must be 'n_items d_sem'")
        n_rows, d_sem = int(header[0]), int(header[1])
        matrix = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if matrix.shape != (n_rows, d_sem):
        raise DataError(f"{path}: header says {n_rows}x{d_sem}, body is {matrix.shape[0]}x{matrix.shape[1]}")
    if not np.all(np.isfinite(matrix)):
        bad = int(np.argwhere(~np.isfinite(matrix))[0, 0])
        raise DataError(f"{path}: non-finite value in row {bad}")

    map_path = Path(str(path) + ".items")
    if ds is not None and ds.item_tokens is not None and map_path.exists():
        tokens = map_path.read_text().split()
        if len(tokens) != n_rows:
            raise DataError(f"{map_path}: {len(tokens)} tokens for {n_rows} rows")
        row_of = {tok: r for r, tok in enumerate(tokens)}
        missing = [t for t in ds.item_tokens if t not in row_of]
        if missing:
            raise DataError(f"{map_path}: no vector for items {missing[:5]}")
        matrix = matrix[[row_of[t] for t in ds.item_tokens]]
    if ds is not None and matrix.shape[0] != ds.n_items:
        raise DataError(f"{path}: {matrix.shape[0]} rows but dataset has {ds.n_items} items")
    return SemanticVectors(matrix)


def save_semantic_vectors(path, sv: SemanticVectors) -> None:
    with open(path, "w") as fh:
        fh.write(f"{sv.n_items} {sv.d_sem}\n")
        np.savetxt(fh, sv.matrix, fmt="%.17g")


def synthesize_semantic_vectors(n_items: int, d_sem: int, seed: int) -> SemanticVectors:
    return SemanticVectors(np.random.default_rng(seed).standard_normal((n_items, d_sem)))


def _user_positive_keys(ds: InteractionDataset, *splits: str) -> np.ndarray:
    return np.unique(np.concatenate([ds.pair_keys(s) for s in splits]))


def sample_negatives(ds: InteractionDataset, client_id: int, ratio: int,
                     rng: np.random.Generator, positives: np.ndarray | None = None) -> np.ndarray:
    """Draw ``ratio`` non-positive items per local positive.

    Returns an ``(n, 3)`` array of ``(user, item, 0)`` rows, ``ratio`` rows per
    positive in order. Users who interacted with every item are skipped.
    """
    if ratio < 1:
        raise DataError("negative ratio must be >= 1")
    if positives is None:
        positives = ds.client_train(client_id)
    if len(positives) == 0:
        return np.empty((0, 3), dtype=np.int64)
    users = np.repeat(positives[:, 0], ratio)

    pos_keys = np.unique(positives[:, 0] * ds.n_items + positives[:, 1])
    n_pos = np.bincount(pos_keys // ds.n_items, minlength=ds.n_users)
    full = n_pos[users] >= ds.n_items
    if full.any():
        logger.warning("client %s: %d users interacted with every item; no negatives drawn",
                       client_id, len(np.unique(users[full])))
        users = users[~full]

    items = rng.integers(0, ds.n_items, size=len(users))
    bad = np.isin(users * ds.n_items + items, pos_keys)
    while bad.any():
        items[bad] = rng.integers(0, ds.n_items, size=int(bad.sum()))
        bad[bad] = np.isin(users[bad] * ds.n_items + items[bad], pos_keys)
    return np.stack([users, items, np.zeros_like(items)], axis=1)


def inject_click_noise(ds: InteractionDataset, noise_ratio: float,
                       rng: np.random.Generator) -> InteractionDataset:
    """Add ``ceil(noise_ratio * |train|)`` fake positives to train.

    Each fake click pairs a uniformly drawn user that has train data with an item
    that user has not interacted with in any split, so splits stay disjoint.
    """
    if not 0.0 <= noise_ratio <= 1.0:
        raise DataError("noise_ratio must lie in [0, 1]")
    n_add = math.ceil(noise_ratio * len(ds.train) - 1e-9)
    if n_add == 0:
        return ds
    taken = set(_user_positive_keys(ds, "train", "val", "test").tolist())
    candidates = np.unique(ds.train[:, 0])
    added: list[int] = []
    owned = np.isin(np.fromiter(taken, dtype=np.int64) // ds.n_items, candidates)
    capacity = len(candidates) * ds.n_items - int(owned.sum())
    if n_add > capacity:
        raise DataError(f"cannot add {n_add} noisy clicks; only {capacity} free pairs")
    while len(added) < n_add:
        need = n_add - len(added)
        us = candidates[rng.integers(0, len(candidates), size=need)]
        its = rng.integers(0, ds.n_items, size=need)
        for key in (us * ds.n_items + its).tolist():
            if key not in taken:
                taken.add(key)
                added.append(key)
    keys = np.asarray(added[:n_add], dtype=np.int64)
    noisy = np.stack([keys // ds.n_items, keys % ds.n_items], axis=1)
    train = np.concatenate([ds.train, noisy])
    train = train[np.lexsort((train[:, 1], train[:, 0]))]
    return replace(ds, train=train)
