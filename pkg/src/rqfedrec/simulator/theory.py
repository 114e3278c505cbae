"""Monte-Carlo checks of the aggregation noise-energy laws.

Each contributor's noise vector has ``d`` i.i.d. Gaussian coordinates of
variance ``sigma2 / d`` so its expected squared norm is ``sigma2``. Averaging
``n`` independent contributors leaves expected energy ``sigma2 / n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CHUNK = 2048


@dataclass
class TheoryTrial:
    sigma2: float
    n_i: int
    n_c: int
    L: int
    n_eff: float
    trials: int
    id_energy: float = float("nan")
    id_se: float = float("nan")
    code_energy: float = float("nan")
    code_se: float = float("nan")
    level_counts: list[int] = field(default_factory=list)
    bound: float = float("nan")

    @property
    def expected_id(self) -> float:
        return self.sigma2 / self.n_i

    @property
    def expected_code(self) -> float:
        return self.sigma2 / self.n_c


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(len(x)))


def _chunks(trials: int):
    done = 0
    while done < trials:
        size = min(CHUNK, trials - done)
        yield size
        done += size


def verify_theorem1(sigma2: float, n_i: int, n_c: int, trials: int, d: int,
                    rng: np.random.Generator) -> TheoryTrial:
    """Energy of averaging ``n_i`` (ID path) vs ``n_c`` (code path) noisy copies.

    The code path's contributors include the ID path's, as when every client
    updating the item also updates its code.
    """
    if not n_c >= n_i >= 1:
        raise ValueError("need n_c >= n_i >= 1")
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    scale = np.sqrt(sigma2 / d)
    id_e, code_e = [], []
    for size in _chunks(trials):
        noise = rng.normal(0.0, scale, size=(size, n_c, d))
        id_mean = noise[:, :n_i].mean(axis=1)
        code_mean = noise.mean(axis=1)
        id_e.append((id_mean ** 2).sum(1))
        code_e.append((code_mean ** 2).sum(1))
    id_energy, id_se = _mean_se(np.concatenate(id_e))
    code_energy, code_se = _mean_se(np.concatenate(code_e))
    return TheoryTrial(sigma2=sigma2, n_i=n_i, n_c=n_c, L=1, n_eff=float(n_c), trials=trials,
                       id_energy=id_energy, id_se=id_se, code_energy=code_energy, code_se=code_se,
                       level_counts=[n_c], bound=sigma2 / n_c)


def effective_contributions(level_counts) -> float:
    return 1.0 / sum(1.0 / n for n in level_counts)


def verify_multilevel_bound(sigma2: float, level_counts, trials: int, d: int,
                            rng: np.random.Generator) -> TheoryTrial:
    """Energy of a sum over levels of per-level averages of independent noise."""
    level_counts = [int(n) for n in level_counts]
    if not level_counts or min(level_counts) < 1:
        raise ValueError("every level needs at least one contributor")
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    scale = np.sqrt(sigma2 / d)
    energies = []
    for size in _chunks(trials):
        total = np.zeros((size, d))
        for n in level_counts:
            total += rng.normal(0.0, scale, size=(size, n, d)).mean(axis=1)
        energies.append((total ** 2).sum(1))
    energy, se = _mean_se(np.concatenate(energies))
    n_eff = effective_contributions(level_counts)
    return TheoryTrial(sigma2=sigma2, n_i=min(level_counts), n_c=max(level_counts), L=len(level_counts),
                       n_eff=n_eff, trials=trials, code_energy=energy, code_se=se,
                       level_counts=level_counts, bound=sigma2 / n_eff)
