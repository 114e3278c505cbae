from __future__ import annotations

import numpy as np
import pytest

from rqfedrec.config import ExperimentConfig


def write_interactions(path, n_users: int = 30, n_items: int = 60, per_user: int = 12, seed: int = 0):
    """Random implicit-feedback TSV with ``per_user`` distinct items per user."""
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        for u in range(n_users):
            for i in rng.choice(n_items, per_user, replace=False):
                fh.write(f"{u}\t{i}\t1\n")
    return path


@pytest.fixture
def tiny_tsv(tmp_path):
    return write_interactions(tmp_path / "tiny.tsv")


@pytest.fixture
def tiny_config(tiny_tsv, tmp_path):
    return ExperimentConfig(dataset_path=str(tiny_tsv), n_clients=5, d=8, M=4, L=2, tau=2, T_warm=3,
                            rounds=5, codebook_steps=10, d_sem=8, output_dir=str(tmp_path / "out"))


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
