"""Closed-form communication counts (number of transmitted values)."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class DatasetDims:
    name: str
    n_items: int
    d: int
    M: int
    L: int = 3


# Per-dataset settings of the communication-resource comparison.
PRESETS = {
    "ml-100k": DatasetDims("Ml-100k", 1682, 512, 256),
    "ml-1m": DatasetDims("Ml-1m", 3706, 512, 512),
    "steam": DatasetDims("Steam", 5237, 512, 512),
    "toys": DatasetDims("Toys", 16454, 512, 1024),
    "book": DatasetDims("Book", 9332, 512, 512),
}


def comm_account(method: str, n_items: int, d: int, M: int = 0, L: int = 0, channels: int = 2) -> dict:
    """Per-client, per-round upload/download value counts.

    ``fedmf`` moves the whole item table both ways. ``rqfedrec`` uploads
    ``channels`` codebook sets and downloads them together with one code-ID
    table per channel.
    """
    if min(n_items, d) < 1:
        raise ValueError("n_items and d must be positive")
    if method == "fedmf":
        return {"upload": n_items * d, "download": n_items * d}
    if method == "rqfedrec":
        if min(M, L, channels) < 1:
            raise ValueError("M, L and channels must be positive")
        return {"upload": channels * L * M * d, "download": channels * (L * M * d + n_items * L)}
    if method == "local":
        return {"upload": 0, "download": 0}
    raise ValueError(f"unknown method {method!r}")


def round_counts(n_items: int, d: int, M: int, L: int, codebook_channels: int, id_channels: int) -> dict:
    """Value counts of one RQFedRec round given what the broadcast actually carries.

    Semantic IDs ship once and collaborative IDs ship while they exist, so a
    round's download holds ``id_channels`` code-ID tables, which may differ
    from ``codebook_channels``. With ``id_channels == codebook_channels`` this
    is ``comm_account('rqfedrec', ...)``.
    """
    return {
        "upload": codebook_channels * L * M * d,
        "download": codebook_channels * L * M * d + id_channels * n_items * L,
    }


def percentage(resource: int, baseline: int) -> int:
    """Resource as an integer percent of baseline.

    The ratio is first rounded to a tenth of a percent, then to a whole percent
    with ties to even (38.51% -> 38.5% -> 38%).
    """
    tenths = round(Fraction(1000 * resource, baseline))
    return round(Fraction(tenths, 10))


def resource_table(dims: list[DatasetDims]) -> list[dict]:
    rows = []
    for dim in dims:
        fed = comm_account("fedmf", dim.n_items, dim.d)["download"]
        rq = comm_account("rqfedrec", dim.n_items, dim.d, dim.M, dim.L, channels=2)["download"]
        rows.append({"dataset": dim.name, "method": "FedMF", "parameter": f"d={dim.d}, n_i={dim.n_items}",
                     "resource": fed, "percentage": 100})
        rows.append({"dataset": dim.name, "method": "RQFedRec", "parameter": f"d={dim.d}, M={dim.M}, L={dim.L}",
                     "resource": rq, "percentage": percentage(rq, fed)})
    return rows
