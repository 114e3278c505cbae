import csv
import json

import numpy as np
import pytest

from rqfedrec.simulator import accounting
from rqfedrec.simulator.runner import (
    RoundReport,
    SimulationError,
    prepare_data,
    run,
    run_dp_sweep,
    run_noise_robustness,
    write_reports_csv,
    write_summary_json,
    write_table_csv,
)


def check_counts(result, config, n_items):
    for r in result.reports:
        assert r.upload_params_per_client == r.expected_upload
        assert r.download_params_per_client == r.expected_download
        assert r.upload_params_total == r.upload_params_per_client * config.n_clients


def test_smoke_single_client_single_round(tiny_config):
    cfg = tiny_config.with_overrides(n_clients=1, rounds=1)
    result = run(cfg)
    (r,) = result.reports
    assert r.round == 1 and r.lam == 0.0 and r.local_loss > 0 and r.distill_loss >= 0
    assert 0.0 <= r.val_ndcg <= 1.0 and r.wall_time > 0
    assert set(result.test) >= {"recall", "mrr", "ndcg"}


def test_rqfedrec_counts_follow_channels(tiny_config):
    cfg = tiny_config.with_overrides(rounds=6)
    ds, sv = prepare_data(cfg)
    result = run(cfg, ds, sv)
    check_counts(result, cfg, ds.n_items)
    L, M, d, n = cfg.L, cfg.M, cfg.d, ds.n_items
    r = result.reports
    # round 1 ships semantic IDs once; collaborative channel appears after round tau=2
    assert (r[0].upload_params_per_client, r[0].download_params_per_client) == (L * M * d, L * M * d + n * L)
    assert (r[1].upload_params_per_client, r[1].download_params_per_client) == (L * M * d, L * M * d)
    full = accounting.comm_account("rqfedrec", n, d, M, L, channels=2)
    for rep in r[2:]:
        assert rep.upload_params_per_client == full["upload"]
        assert rep.download_params_per_client == full["download"] - n * L
        assert rep.upload_bytes_per_client == r[2].upload_bytes_per_client
    assert [rep.lam for rep in r] == [0.0, 0.0, 1.0, 1.0, 1.0, 1.0]
    digest = result.server.semantic_codes_digest()
    assert digest == run(cfg, ds, sv).server.semantic_codes_digest()


def test_lambda_ramps(tiny_config):
    cfg = tiny_config.with_overrides(rounds=5, tau=2, T_warm=10)
    assert [r.lam for r in run(cfg).reports] == [0.0, 0.0, 0.3, 0.4, 0.5]


def test_determinism(tiny_config, tmp_path):
    paths = []
    for k in range(2):
        result = run(tiny_config)
        path = tmp_path / f"r{k}.csv"
        write_reports_csv(result.reports, path)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert "wall_time" not in paths[0].read_text().splitlines()[0]


def test_baselines(tiny_config):
    local = run(tiny_config.with_overrides(method="local", rounds=2))
    assert all(r.upload_params_per_client == r.download_params_per_client == 0 for r in local.reports)
    fed = run(tiny_config.with_overrides(method="fedmf", rounds=2))
    ds, _ = prepare_data(tiny_config)
    assert fed.reports[0].upload_params_per_client == ds.n_items * tiny_config.d
    tables = [m.item_table for m in fed.models]
    assert not np.array_equal(tables[0], tables[1])


def test_fedmf_single_client_roundtrip(tiny_config):
    cfg = tiny_config.with_overrides(method="fedmf", rounds=1, n_clients=1)
    result = run(cfg)
    ds, _ = prepare_data(cfg)
    from rqfedrec.client import local_train, make_client
    from rqfedrec.model import set_item_table
    from rqfedrec.simulator.runner import _CLICKS, _INIT, _SERVER, _TRAIN, _rng
    state = make_client(ds, 0, cfg.d, _rng(cfg.seed, _INIT, 0, 0), lr=cfg.lr, weight_decay=cfg.weight_decay)
    set_item_table(state.model, _rng(cfg.seed, _SERVER).normal(0.0, 0.01, size=(ds.n_items, cfg.d)))
    local_train(state, 1, _rng(cfg.seed, _TRAIN, 1, 0), neg_ratio=cfg.neg_ratio, batch_size=cfg.batch_size)
    np.testing.assert_array_equal(result.models[0].item_table, state.model.item_table)
    assert _CLICKS != _TRAIN


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_errors_carry_round_context(tiny_config):
    cfg = tiny_config.with_overrides(rounds=2)
    ds, sv = prepare_data(cfg)
    sv.matrix = sv.matrix[:3]
    with pytest.raises(Exception):
        run(cfg, ds, sv)
    bad = tiny_config.with_overrides(lr=1e300, rounds=3)
    with pytest.raises(SimulationError, match="round 1"):
        run(bad)


def test_noise_and_dp_sweeps(tiny_config):
    cfg = tiny_config.with_overrides(rounds=2)
    rows = run_noise_robustness(cfg, [0.0, 0.2])
    assert len(rows) == 4 and {r["method"] for r in rows} == {"fedmf", "rqfedrec"}
    clean = run(cfg)
    assert rows[1]["ndcg"] == clean.test["ndcg"]
    with pytest.raises(ValueError):
        run_noise_robustness(cfg, [1.5])
    dp = run_dp_sweep(cfg, [0.0, 0.02, 0.04, 0.06, 0.08])
    assert [r["delta"] for r in dp] == [0.0, 0.02, 0.04, 0.06, 0.08]
    assert dp[0]["ndcg"] == clean.test["ndcg"]


def test_writers(tiny_config, tmp_path):
    result = run(tiny_config.with_overrides(rounds=2))
    write_reports_csv(result.reports, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and list(rows[0]) == RoundReport.csv_columns()
    write_summary_json(result, tiny_config, tmp_path / "s.json")
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["rounds"] == 2 and summary["config"]["seed"] == 0
    write_table_csv([], tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text() == ""
