"""Server: codebook aggregation, curriculum schedule, code-ID generation, broadcasts."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import wire
from .client import UploadPacket, blend
from .data import SemanticVectors
from .quantizer import COLLABORATIVE, SEMANTIC, CodeAssignment, CodebookSet, rq_kmeans

CODEBOOK_INIT_STD = 0.01


class ServerError(RuntimeError):
    pass


def lambda_schedule(t: int, T_warm: int, collab_exists: bool) -> float:
    """Collaborative rate for round ``t``: linear warm-up, zero until the channel exists."""
    if T_warm <= 0:
        raise ServerError("T_warm must be positive")
    if t < 0:
        raise ServerError("round must be >= 0")
    if not collab_exists:
        return 0.0
    return min(1.0, t / T_warm)


@dataclass
class Broadcast:
    round: int
    lam: float
    semantic: np.ndarray
    collaborative: np.ndarray | None = None
    semantic_codes: np.ndarray | None = None
    collaborative_codes: np.ndarray | None = None

    MAGIC = b"RQBC"
    _HEADER = struct.Struct("<4sId")

    @property
    def parameter_count(self) -> int:
        parts = [self.semantic, self.collaborative, self.semantic_codes, self.collaborative_codes]
        return int(sum(p.size for p in parts if p is not None))

    def to_bytes(self) -> bytes:
        out = [self._HEADER.pack(self.MAGIC, self.round, self.lam),
               wire.encode_blob(wire.TAG_SEMANTIC_BOOK, self.semantic)]
        if self.collaborative is not None:
            out.append(wire.encode_blob(wire.TAG_COLLAB_BOOK, self.collaborative))
        if self.semantic_codes is not None:
            out.append(wire.encode_blob(wire.TAG_SEMANTIC_IDS, self.semantic_codes))
        if self.collaborative_codes is not None:
            out.append(wire.encode_blob(wire.TAG_COLLAB_IDS, self.collaborative_codes))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Broadcast":
        magic, rnd, lam = cls._HEADER.unpack_from(buf, 0)
        if magic != cls.MAGIC:
            raise wire.WireError("not a broadcast payload")
        blobs = {b.tag: b.array for b in wire.decode_blobs(buf, cls._HEADER.size)}
        return cls(rnd, lam, blobs[wire.TAG_SEMANTIC_BOOK], blobs.get(wire.TAG_COLLAB_BOOK),
                   blobs.get(wire.TAG_SEMANTIC_IDS), blobs.get(wire.TAG_COLLAB_IDS))

    @staticmethod
    def parameters_in(buf: bytes) -> int:
        return sum(b.n_values for b in wire.decode_blobs(buf, Broadcast._HEADER.size))


@dataclass
class ServerConfig:
    M: int
    L: int
    d: int
    tau: int = 10
    T_warm: int = 100
    kmeans_iters: int = 50


class ServerState:
    """Global codebooks and code IDs for both channels.

    ``round`` counts completed aggregations; the next broadcast is for
    ``round + 1``.
    """

    def __init__(self, config: ServerConfig):
        self.config = config
        self.global_semantic: CodebookSet | None = None
        self.global_collaborative: CodebookSet | None = None
        self.semantic_codes: CodeAssignment | None = None
        self.collaborative_codes: CodeAssignment | None = None
        self.round = 0
        self._semantic_ids_sent = False

    @property
    def collab_exists(self) -> bool:
        return self.global_collaborative is not None

    def lam(self, t: int | None = None) -> float:
        return lambda_schedule(self.round if t is None else t, self.config.T_warm, self.collab_exists)

    def bootstrap_semantic(self, semantic_vectors: SemanticVectors, seed: int) -> None:
        """Derive frozen semantic code IDs and fresh model-space semantic codebooks."""
        if self.semantic_codes is not None:
            raise ServerError("semantic channel already bootstrapped")
        c = self.config
        _, codes = rq_kmeans(semantic_vectors.matrix, c.M, c.L, seed=seed, max_iters=c.kmeans_iters)
        self.semantic_codes = codes
        self.semantic_codes.codes.flags.writeable = False
        rng = np.random.default_rng([seed, 1])
        self.global_semantic = CodebookSet(rng.normal(0.0, CODEBOOK_INIT_STD, size=(c.L, c.M, c.d)), SEMANTIC)

    def semantic_codes_digest(self) -> str:
        return hashlib.sha256(self.semantic_codes.codes.tobytes()).hexdigest()

    def aggregate(self, packets: list[UploadPacket]) -> None:
        """Sample-weighted average of uploaded codebooks per channel; closes the round."""
        if not packets:
            raise ServerError("no packets to aggregate")
        shape = (self.config.L, self.config.M, self.config.d)
        weights = np.array([p.sample_weight for p in packets], dtype=np.float64)
        total = weights.sum()
        if total <= 0:
            raise ServerError("total sample weight is zero")
        weights /= total
        for p in packets:
            if p.semantic_codebooks.shape != shape:
                raise ServerError(f"client {p.client_id} semantic codebooks {p.semantic_codebooks.shape} != {shape}")
        has_col = [p.collaborative_codebooks is not None for p in packets]
        if any(has_col) and not all(has_col):
            raise ServerError("packets disagree on collaborative channel presence")

        self.global_semantic = CodebookSet(_weighted_sum(weights, [p.semantic_codebooks for p in packets]), SEMANTIC)
        if all(has_col):
            for p in packets:
                if p.collaborative_codebooks.shape != shape:
                    raise ServerError(f"client {p.client_id} collaborative codebooks have wrong shape")
            self.global_collaborative = CodebookSet(
                _weighted_sum(weights, [p.collaborative_codebooks for p in packets]), COLLABORATIVE)
        self.round += 1

    def reconstruct_global_items(self) -> np.ndarray:
        if self.global_semantic is None:
            raise ServerError("semantic channel not bootstrapped")
        return blend(self.global_semantic, self.semantic_codes, self.lam(),
                     self.global_collaborative, self.collaborative_codes)

    def refresh_collaborative_codes(self, seed: int) -> None:
        """Re-derive collaborative code IDs from normalized global item reconstructions."""
        t, tau = self.round, self.config.tau
        if t == 0 or t % tau != 0:
            raise ServerError(f"collaborative refresh only on rounds divisible by tau={tau}; round is {t}")
        c = self.config
        items = l2_normalize_rows(self.reconstruct_global_items())
        _, codes = rq_kmeans(items, c.M, c.L, seed=seed, max_iters=c.kmeans_iters, channel=COLLABORATIVE)
        self.collaborative_codes = codes
        if self.global_collaborative is None:
            self.global_collaborative = CodebookSet.zeros(c.L, c.M, c.d, COLLABORATIVE)

    def build_broadcast(self) -> Broadcast:
        t = self.round + 1
        payload = Broadcast(
            round=t,
            lam=self.lam(t),
            semantic=self.global_semantic.levels.copy(),
            collaborative=None if self.global_collaborative is None else self.global_collaborative.levels.copy(),
            collaborative_codes=None if self.collaborative_codes is None else self.collaborative_codes.codes.copy(),
        )
        if not self._semantic_ids_sent:
            payload.semantic_codes = self.semantic_codes.codes.copy()
            self._semantic_ids_sent = True
        return payload


def _weighted_sum(weights: np.ndarray, arrays: list[np.ndarray]) -> np.ndarray:
    # fixed client order keeps the sum reproducible
    out = np.zeros_like(arrays[0], dtype=np.float64)
    for w, a in zip(weights, arrays):
        out += w * a
    return out


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
