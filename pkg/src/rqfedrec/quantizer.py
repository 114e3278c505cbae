"""k-means and residual-quantization k-means (RQ-Kmeans) over embedding tables."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SEMANTIC = "semantic"
COLLABORATIVE = "collaborative"


class QuantizerError(ValueError):
    pass


@dataclass
class CodebookSet:
    """``L`` stacked ``M x d`` codebooks for one channel, stored as ``(L, M, d)``."""

    levels: np.ndarray
    channel: str = SEMANTIC

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.float64)
        if self.levels.ndim != 3:
            raise QuantizerError(f"codebooks must be (L, M, d), got shape {self.levels.shape}")
        if min(self.levels.shape[:2]) < 1:
            raise QuantizerError("need L >= 1 and M >= 1")
        if not np.all(np.isfinite(self.levels)):
            raise QuantizerError("codebooks contain non-finite values")
        if self.channel not in (SEMANTIC, COLLABORATIVE):
            raise QuantizerError(f"unknown channel {self.channel!r}")

    @property
    def L(self) -> int:
        return self.levels.shape[0]

    @property
    def M(self) -> int:
        return self.levels.shape[1]

    @property
    def d(self) -> int:
        return self.levels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.levels.shape

    def copy(self) -> "CodebookSet":
        return CodebookSet(self.levels.copy(), self.channel)

    @classmethod
    def zeros(cls, L: int, M: int, d: int, channel: str = SEMANTIC) -> "CodebookSet":
        return cls(np.zeros((L, M, d)), channel)


@dataclass
class CodeAssignment:
    codes: np.ndarray
    M: int

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        if self.codes.ndim != 2:
            raise QuantizerError(f"codes must be (n_items, L), got shape {self.codes.shape}")
        if self.codes.size and (self.codes.min() < 0 or self.codes.max() >= self.M):
            raise QuantizerError(f"code outside [0, {self.M})")

    @property
    def L(self) -> int:
        return self.codes.shape[1]

    @property
    def n_items(self) -> int:
        return self.codes.shape[0]

    def to_csv(self) -> str:
        return "\n".join(",".join(str(c) for c in row) for row in self.codes) + "\n"

    @classmethod
    def from_csv(cls, text: str, M: int) -> "CodeAssignment":
        rows = [[int(c) for c in line.split(",")] for line in text.splitlines() if line.strip()]
        return cls(np.array(rows, dtype=np.int64), M)


def _check_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise QuantizerError(f"expected a non-empty (N, d) matrix, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise QuantizerError("input contains non-finite values")
    return points


def sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, ``(N, M)``, clipped at zero."""
    d2 = (points * points).sum(1)[:, None] - 2.0 * points @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d2, 0.0)


def sq_distances_direct(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared distances summed coordinate by coordinate from ``(x - c)**2``.

    Slower than :func:`sq_distances` but free of cancellation, so exact ties
    (for instance a zero residual against duplicate centers) stay exact.
    """
    d2 = np.zeros((len(points), len(centers)))
    for k in range(points.shape[1]):
        diff = points[:, k, None] - centers[None, :, k]
        d2 += diff * diff
    return d2


def nearest(points: np.ndarray, centers: np.ndarray, direct: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest center (lowest index on ties) and the squared distance to it."""
    d2 = sq_distances_direct(points, centers) if direct else sq_distances(points, centers)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(len(points)), labels]


def kmeans_plusplus(points: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((M, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = sq_distances(points, centers[:1])[:, 0]
    for j in range(1, M):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            # every point already coincides with a chosen center
            idx = rng.integers(n)
        centers[j] = points[idx]
        closest = np.minimum(closest, sq_distances(points, centers[j:j + 1])[:, 0])
    return centers


def kmeans(points, M: int, max_iters: int = 50, seed=0,
           init: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means with k-means++ seeding.

    Runs until the assignment stops changing or ``max_iters`` update steps have
    been taken. An emptied cluster is re-seeded at the point currently farthest
    from its own center. Returns ``(centers (M, d), assignment (N,))`` where the
    assignment is nearest-center with respect to the returned centers.
    """
    points = _check_points(points)
    if M < 1:
        raise QuantizerError("M must be >= 1")
    if init is None:
        centers = kmeans_plusplus(points, M, np.random.default_rng(seed))
    else:
        centers = np.array(init, dtype=np.float64)
        if centers.shape != (M, points.shape[1]):
            raise QuantizerError(f"init must have shape {(M, points.shape[1])}")

    labels, dist = nearest(points, centers)
    for _ in range(max(1, max_iters)):
        counts = np.bincount(labels, minlength=M)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, points)
        live = counts > 0
        centers = centers.copy()
        centers[live] = sums[live] / counts[live, None]
        if not live.all():
            dist = dist.copy()
            for j in np.flatnonzero(~live):
                far = int(dist.argmax())
                centers[j] = points[far]
                dist[far] = -1.0
        new_labels, dist = nearest(points, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, labels


def rq_kmeans(table, M: int, L: int, seed=0, max_iters: int = 50,
              channel: str = SEMANTIC) -> tuple[CodebookSet, CodeAssignment]:
    """Stacked k-means on successive residuals; level ``l`` uses seed ``(seed, l)``."""
    residual = _check_points(table).copy()
    if L < 1:
        raise QuantizerError("L must be >= 1")
    books, codes = [], []
    for level in range(L):
        centers, labels = kmeans(residual, M, max_iters=max_iters, seed=[_seed_int(seed), level])
        books.append(centers)
        codes.append(labels)
        residual -= centers[labels]
    return CodebookSet(np.stack(books), channel), CodeAssignment(np.stack(codes, axis=1), M)


def _seed_int(seed) -> int:
    return int(seed) if np.isscalar(seed) else int(np.random.default_rng(seed).integers(2**63))


def decode(codebooks: CodebookSet, codes: CodeAssignment) -> np.ndarray:
    """Reconstruct every item: sum over levels of the selected code rows."""
    c = codes.codes
    if c.shape[1] != codebooks.L:
        raise QuantizerError(f"codes have {c.shape[1]} levels, codebooks {codebooks.L}")
    if c.size and c.max() >= codebooks.M:
        raise QuantizerError("code index exceeds codebook size")
    out = codebooks.levels[0][c[:, 0]].copy()
    for level in range(1, codebooks.L):
        out += codebooks.levels[level][c[:, level]]
    return out


def reconstruct(codebooks: CodebookSet, codes: CodeAssignment, item_id: int) -> np.ndarray:
    if not 0 <= item_id < codes.n_items:
        raise QuantizerError(f"item {item_id} out of range")
    row = codes.codes[item_id]
    if len(row) != codebooks.L:
        raise QuantizerError(f"codes have {len(row)} levels, codebooks {codebooks.L}")
    if (row < 0).any() or (row >= codebooks.M).any():
        raise QuantizerError(f"code out of range for item {item_id}: {row.tolist()}")
    out = codebooks.levels[0][row[0]].copy()
    for level in range(1, codebooks.L):
        out += codebooks.levels[level][row[level]]
    return out


def assign_codes(table, codebooks: CodebookSet) -> CodeAssignment:
    """Greedy level-by-level nearest-code assignment against fixed codebooks."""
    residual = _check_points(table).copy()
    if residual.shape[1] != codebooks.d:
        raise QuantizerError(f"table has d={residual.shape[1]}, codebooks d={codebooks.d}")
    codes = np.empty((len(residual), codebooks.L), dtype=np.int64)
    for level, book in enumerate(codebooks.levels):
        labels, _ = nearest(residual, book, direct=True)
        codes[:, level] = labels
        residual -= book[labels]
    return CodeAssignment(codes, codebooks.M)


def reconstruction_error(table, codebooks: CodebookSet, codes: CodeAssignment) -> float:
    """Mean squared L2 error between the table and its reconstruction."""
    diff = np.asarray(table, dtype=np.float64) - decode(codebooks, codes)
    return float((diff * diff).sum(1).mean())
