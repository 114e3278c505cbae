import numpy as np
import pytest

from rqfedrec.simulator.theory import effective_contributions, verify_multilevel_bound, verify_theorem1


def test_single_contributor_energy():
    tr = verify_theorem1(1.0, 1, 1, 10_000, 16, np.random.default_rng(0))
    assert abs(tr.id_energy - 1.0) < 0.05
    assert tr.id_energy == tr.code_energy


def test_four_vs_sixteen():
    tr = verify_theorem1(1.0, 4, 16, 10_000, 16, np.random.default_rng(1))
    assert abs(tr.id_energy - 0.25) < 0.025 and abs(tr.code_energy - 0.0625) < 0.00625
    assert abs(tr.id_energy / tr.code_energy - 4) < 0.4


def test_preconditions():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        verify_theorem1(1.0, 5, 4, 1000, 4, rng)
    with pytest.raises(ValueError):
        verify_theorem1(1.0, 1, 1, 999, 4, rng)
    with pytest.raises(ValueError):
        verify_multilevel_bound(1.0, [2, 0], 1000, 4, rng)


def test_effective_contributions():
    assert effective_contributions([2, 2, 2]) == pytest.approx(2 / 3)
    tr = verify_multilevel_bound(1.0, [2, 2, 2], 1000, 8, np.random.default_rng(0))
    assert tr.bound == pytest.approx(1.5) and tr.n_eff == pytest.approx(2 / 3)


def test_single_level_reduces_to_theorem1():
    a = verify_multilevel_bound(2.0, [5], 4000, 8, np.random.default_rng(3))
    b = verify_theorem1(2.0, 5, 5, 4000, 8, np.random.default_rng(3))
    assert a.code_energy == pytest.approx(b.code_energy, rel=0.1)
    assert a.bound == b.bound == pytest.approx(0.4)


def test_reproducible():
    a = verify_multilevel_bound(1.0, [4, 8], 2000, 4, np.random.default_rng(9))
    b = verify_multilevel_bound(1.0, [4, 8], 2000, 4, np.random.default_rng(9))
    assert a.code_energy == b.code_energy
