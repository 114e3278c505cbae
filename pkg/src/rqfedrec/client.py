"""Federated client: local MF training, Laplace perturbation, codebook distillation."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import wire
from .data import InteractionDataset, sample_negatives
from .model import Adam, MfModel, set_item_table, train_epoch
from .quantizer import COLLABORATIVE, SEMANTIC, CodeAssignment, CodebookSet, decode


class ClientError(ValueError):
    pass


@dataclass
class ClientState:
    client_id: int
    model: MfModel
    dataset: InteractionDataset
    train: np.ndarray
    optimizer: Adam
    semantic: CodebookSet | None = None
    collaborative: CodebookSet | None = None
    semantic_codes: CodeAssignment | None = None
    collaborative_codes: CodeAssignment | None = None
    teacher: np.ndarray | None = None

    @property
    def interacted_items(self) -> np.ndarray:
        return np.unique(self.train[:, 1])

    @property
    def sample_weight(self) -> int:
        return len(self.train)


def make_client(ds: InteractionDataset, client_id: int, d: int, rng: np.random.Generator,
                lr: float = 1e-3, weight_decay: float = 1e-6) -> ClientState:
    model = MfModel.init(ds.client_users(client_id), ds.n_items, d, rng)
    return ClientState(
        client_id=client_id,
        model=model,
        dataset=ds,
        train=ds.client_train(client_id),
        optimizer=Adam(lr=lr, weight_decay=weight_decay),
    )


def local_train(state: ClientState, epochs: int, rng: np.random.Generator,
                neg_ratio: int = 4, batch_size: int = 256) -> list[float]:
    """Run ``epochs`` of BCE training on local positives plus fresh negatives."""
    if len(state.train) == 0:
        return [0.0] * epochs
    positives = np.column_stack([state.train, np.ones(len(state.train), dtype=np.int64)])
    losses = []
    for _ in range(epochs):
        negatives = sample_negatives(state.dataset, state.client_id, neg_ratio, rng, positives=state.train)
        examples = np.concatenate([positives, negatives])
        losses.append(train_epoch(state.model, state.optimizer, examples, rng, batch_size=batch_size))
    return losses


def laplace_noise(shape, delta: float, rng: np.random.Generator) -> np.ndarray:
    if delta < 0:
        raise ClientError("Laplace scale must be >= 0")
    if delta == 0:
        return np.zeros(shape)
    return rng.laplace(0.0, delta, size=shape)


def perturb_items(state: ClientState, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Build the distillation teacher: a noised copy of the item table.

    The live model table is left untouched so noise never compounds across rounds.
    """
    table = state.model.item_table
    state.teacher = table + laplace_noise(table.shape, delta, rng)
    return state.teacher


def _check_lambda(lam: float, collaborative) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ClientError(f"lambda must lie in [0, 1], got {lam}")
    if collaborative is None and lam > 0:
        raise ClientError("lambda > 0 requires a collaborative channel")
    return lam


def blend(semantic: CodebookSet, semantic_codes: CodeAssignment, lam: float,
          collaborative: CodebookSet | None = None,
          collaborative_codes: CodeAssignment | None = None) -> np.ndarray:
    """Dual-channel decode of every item."""
    _check_lambda(lam, collaborative)
    out = decode(semantic, semantic_codes)
    if collaborative is not None and collaborative_codes is not None:
        out = (1.0 - lam) * out + lam * decode(collaborative, collaborative_codes)
    return out


def decode_item(state: ClientState, item_id: int, lam: float,
                semantic_codes: CodeAssignment | None = None,
                collab_codes: CodeAssignment | None = None) -> np.ndarray:
    semantic_codes = semantic_codes if semantic_codes is not None else state.semantic_codes
    collab_codes = collab_codes if collab_codes is not None else state.collaborative_codes
    _check_lambda(lam, state.collaborative)
    sem = state.semantic.levels[np.arange(state.semantic.L), semantic_codes.codes[item_id]].sum(0)
    if state.collaborative is None or collab_codes is None:
        return sem
    col = state.collaborative.levels[np.arange(state.collaborative.L), collab_codes.codes[item_id]].sum(0)
    return (1.0 - lam) * sem + lam * col


def _compact_rows(codes: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Active flat code rows ``l*M + m`` and each item's positions among them, ``(n, L)``."""
    n, L = codes.shape
    flat = (codes + np.arange(L)[None, :] * M).ravel()
    active, pos = np.unique(flat, return_inverse=True)
    return active, pos.reshape(n, L).astype(np.int64)


@njit(cache=True, error_model="numpy")
def _distill_kernel(teacher, lam, sem, sem_pos, col, col_pos, g_sem, g_col):
    """Loss of the dual-channel reconstruction; gradients are written into ``g_sem``/``g_col``."""
    n, d = teacher.shape
    has_col = col_pos.shape[1] > 0
    w_sem = 1.0 - lam if has_col else 1.0
    scale = 2.0 / n
    g_sem[:] = 0.0
    g_col[:] = 0.0
    rec_sem = np.empty(d)
    rec_col = np.empty(d)
    resid = np.empty(d)
    sq = np.zeros(d)
    for i in range(n):
        # Inner loops run along contiguous rows so they vectorize.
        rec_sem[:] = 0.0
        for l in range(sem_pos.shape[1]):
            row = sem_pos[i, l]
            for k in range(d):
                rec_sem[k] += sem[row, k]
        if has_col:
            rec_col[:] = 0.0
            for l in range(col_pos.shape[1]):
                row = col_pos[i, l]
                for k in range(d):
                    rec_col[k] += col[row, k]
            for k in range(d):
                resid[k] = (w_sem * rec_sem[k] + lam * rec_col[k]) - teacher[i, k]
        else:
            for k in range(d):
                resid[k] = rec_sem[k] - teacher[i, k]
        for k in range(d):
            sq[k] += resid[k] * resid[k]
            resid[k] *= scale
        for l in range(sem_pos.shape[1]):
            row = sem_pos[i, l]
            for k in range(d):
                g_sem[row, k] += w_sem * resid[k]
        for l in range(col_pos.shape[1]):
            row = col_pos[i, l]
            for k in range(d):
                g_col[row, k] += lam * resid[k]
    return sq.sum() / n


class Distiller:
    """Mean squared error between teacher rows and their dual-channel reconstructions.

    Code IDs are fixed, so the loss depends only on the code rows some distilled
    item actually indexes. Those rows are the optimization variables, packed as
    ``(n_active, d)`` arrays per channel; every other row has zero gradient.
    """

    def __init__(self, teacher_rows, lam: float, semantic_codes: np.ndarray, M: int,
                 collaborative_codes: np.ndarray | None = None):
        self.teacher = np.ascontiguousarray(teacher_rows, dtype=np.float64)
        self.lam = float(lam)
        self.M = M
        self.sem_active, self._sem_pos = _compact_rows(np.asarray(semantic_codes), M)
        self.col_active = None
        self._col_pos = np.zeros((len(self.teacher), 0), dtype=np.int64)
        if collaborative_codes is not None:
            self.col_active, self._col_pos = _compact_rows(np.asarray(collaborative_codes), M)

    @property
    def has_collaborative(self) -> bool:
        return self.col_active is not None

    def gather(self, sem_levels: np.ndarray, col_levels: np.ndarray | None = None):
        d = sem_levels.shape[-1]
        sem = sem_levels.reshape(-1, d)[self.sem_active]
        col = None if not self.has_collaborative else col_levels.reshape(-1, d)[self.col_active]
        return sem, col

    def scatter(self, sem_levels: np.ndarray, sem: np.ndarray,
                col_levels: np.ndarray | None = None, col: np.ndarray | None = None) -> None:
        d = sem_levels.shape[-1]
        sem_levels.reshape(-1, d)[self.sem_active] = sem
        if self.has_collaborative:
            col_levels.reshape(-1, d)[self.col_active] = col

    def reconstruct(self, sem: np.ndarray, col: np.ndarray | None = None) -> np.ndarray:
        out = sem[self._sem_pos].sum(1)
        if self.has_collaborative:
            out = (1.0 - self.lam) * out + self.lam * col[self._col_pos].sum(1)
        return out

    def loss_and_grads(self, sem: np.ndarray, col: np.ndarray | None = None):
        """Loss and gradients with respect to the packed active rows."""
        sem = np.ascontiguousarray(sem, dtype=np.float64)
        g_sem = np.empty_like(sem)
        if self.has_collaborative:
            col = np.ascontiguousarray(col, dtype=np.float64)
            g_col = np.empty_like(col)
        else:
            col = g_col = np.empty((0, sem.shape[1]))
        loss = _distill_kernel(self.teacher, self.lam, sem, self._sem_pos, col, self._col_pos,
                               g_sem, g_col)
        return loss, g_sem, (g_col if self.has_collaborative else None)

    def full_loss_and_grads(self, sem_levels: np.ndarray, col_levels: np.ndarray | None = None):
        """Same as :meth:`loss_and_grads` but on full ``(L, M, d)`` codebooks."""
        loss, g_sem, g_col = self.loss_and_grads(*self.gather(sem_levels, col_levels))
        full_sem = np.zeros_like(sem_levels)
        full_col = None if col_levels is None else np.zeros_like(col_levels)
        self.scatter(full_sem, g_sem, full_col, g_col)
        return loss, full_sem, full_col


def make_distiller(state: ClientState, lam: float) -> Distiller | None:
    items = state.interacted_items
    if len(items) == 0:
        return None
    teacher = state.teacher if state.teacher is not None else state.model.item_table
    has_col = state.collaborative is not None and state.collaborative_codes is not None
    return Distiller(teacher[items], lam, state.semantic_codes.codes[items], state.semantic.M,
                     state.collaborative_codes.codes[items] if has_col else None)


def train_codebooks(state: ClientState, lam: float, steps: int = 100, lr: float = 1e-2) -> list[float]:
    """Fit the local codebooks to the teacher rows of interacted items by Adam.

    Only code entries indexed by some interacted item receive gradient; all others
    keep their broadcast values exactly. Returns the loss before each step and the
    final loss (empty when the client has no interactions).
    """
    _check_lambda(lam, state.collaborative)
    if state.semantic is None or state.semantic_codes is None:
        raise ClientError(f"client {state.client_id} has no semantic codebooks")
    dist = make_distiller(state, lam)
    if dist is None:
        return []
    col_levels = state.collaborative.levels if dist.has_collaborative else None
    sem, col = dist.gather(state.semantic.levels, col_levels)
    params = [sem] if col is None else [sem, col]
    opt = Adam(lr=lr)
    losses = []
    for _ in range(steps):
        loss, g_sem, g_col = dist.loss_and_grads(sem, col)
        if not np.isfinite(loss):
            raise ClientError(f"client {state.client_id}: non-finite distillation loss at step {len(losses)}; "
                              f"max |teacher|={np.abs(dist.teacher).max():.3g}")
        losses.append(loss)
        opt.step(params, [g_sem] if col is None else [g_sem, g_col])
    losses.append(dist.loss_and_grads(sem, col)[0])
    dist.scatter(state.semantic.levels, sem, col_levels, col)
    return losses


@dataclass(frozen=True)
class UploadPacket:
    client_id: int
    semantic_codebooks: np.ndarray
    collaborative_codebooks: np.ndarray | None
    sample_weight: int

    MAGIC = b"RQUP"
    _HEADER = struct.Struct("<4sIQ")

    @property
    def parameter_count(self) -> int:
        n = self.semantic_codebooks.size
        if self.collaborative_codebooks is not None:
            n += self.collaborative_codebooks.size
        return int(n)

    def to_bytes(self) -> bytes:
        out = [self._HEADER.pack(self.MAGIC, self.client_id, self.sample_weight),
               wire.encode_blob(wire.TAG_SEMANTIC_BOOK, self.semantic_codebooks)]
        if self.collaborative_codebooks is not None:
            out.append(wire.encode_blob(wire.TAG_COLLAB_BOOK, self.collaborative_codebooks))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "UploadPacket":
        magic, client_id, weight = cls._HEADER.unpack_from(buf, 0)
        if magic != cls.MAGIC:
            raise wire.WireError("not an upload packet")
        books = {b.tag: b.array for b in wire.decode_blobs(buf, cls._HEADER.size)}
        if set(books) - {wire.TAG_SEMANTIC_BOOK, wire.TAG_COLLAB_BOOK}:
            raise wire.WireError("upload packet may only carry codebooks")
        if wire.TAG_SEMANTIC_BOOK not in books:
            raise wire.WireError("upload packet lacks the semantic codebooks")
        return cls(client_id, books[wire.TAG_SEMANTIC_BOOK], books.get(wire.TAG_COLLAB_BOOK), weight)

    @staticmethod
    def parameters_in(buf: bytes) -> int:
        """Count values by walking the serialized blobs."""
        return sum(b.n_values for b in wire.decode_blobs(buf, UploadPacket._HEADER.size))


def build_upload(state: ClientState) -> UploadPacket:
    if state.semantic is None:
        raise ClientError("no codebooks to upload")
    packet = UploadPacket(
        client_id=state.client_id,
        semantic_codebooks=state.semantic.levels.copy(),
        collaborative_codebooks=None if state.collaborative is None else state.collaborative.levels.copy(),
        sample_weight=state.sample_weight,
    )
    check_privacy_surface(packet)
    return packet


def check_privacy_surface(packet: UploadPacket) -> None:
    """Packets carry ``(L, M, d)`` codebooks only: no per-item or per-user matrices."""
    shapes = [packet.semantic_codebooks.shape]
    if packet.collaborative_codebooks is not None:
        shapes.append(packet.collaborative_codebooks.shape)
    for shape in shapes:
        if len(shape) != 3:
            raise ClientError(f"upload carries a non-codebook array of shape {shape}")
    if packet.collaborative_codebooks is not None and shapes[0] != shapes[1]:
        raise ClientError("channel codebook shapes differ")


def receive_codebooks(state: ClientState, semantic: CodebookSet, collaborative: CodebookSet | None,
                      semantic_codes: CodeAssignment | None = None,
                      collaborative_codes: CodeAssignment | None = None) -> None:
    """Start this round's local codebooks from the global broadcast."""
    state.semantic = CodebookSet(semantic.levels.copy(), SEMANTIC)
    state.collaborative = None if collaborative is None else CodebookSet(collaborative.levels.copy(), COLLABORATIVE)
    if semantic_codes is not None:
        state.semantic_codes = semantic_codes
    if collaborative_codes is not None:
        state.collaborative_codes = collaborative_codes


def refresh_items(state: ClientState, global_semantic: CodebookSet, global_collab: CodebookSet | None,
                  lam: float, semantic_codes: CodeAssignment | None = None,
                  collab_codes: CodeAssignment | None = None) -> None:
    """Replace every item row with its dual-channel reconstruction from global codebooks."""
    semantic_codes = semantic_codes if semantic_codes is not None else state.semantic_codes
    collab_codes = collab_codes if collab_codes is not None else state.collaborative_codes
    if global_semantic.d != state.model.d:
        raise ClientError(f"codebook d={global_semantic.d} but model d={state.model.d}")
    if global_collab is not None and global_collab.shape != global_semantic.shape:
        raise ClientError("channel codebook shapes differ")
    table = blend(global_semantic, semantic_codes, lam, global_collab, collab_codes)
    set_item_table(state.model, table)
