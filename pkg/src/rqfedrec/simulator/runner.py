"""End-to-end federated runs: RQFedRec, FedMF and the no-aggregation MF baseline."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..client import (
    UploadPacket,
    build_upload,
    local_train,
    make_client,
    perturb_items,
    receive_codebooks,
    refresh_items,
    train_codebooks,
)
from ..config import ExperimentConfig
from ..data import (
    InteractionDataset,
    SemanticVectors,
    inject_click_noise,
    load_dataset,
    load_semantic_vectors,
    partition_clients,
    split_dataset,
    synthesize_semantic_vectors,
)
from ..model import set_item_table
from ..quantizer import CodeAssignment, CodebookSet, COLLABORATIVE, SEMANTIC
from ..server import Broadcast, ServerConfig, ServerState
from .accounting import comm_account, round_counts
from .metrics import evaluate

logger = logging.getLogger(__name__)

# stream tags for derived RNG seeds
_INIT, _TRAIN, _NOISE, _SERVER, _CLICKS = range(5)


class SimulationError(RuntimeError):
    pass


def _rng(seed: int, stream: int, t: int = 0, client: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, t, client])


@dataclass
class RoundReport:
    round: int
    lam: float
    local_loss: float
    distill_loss: float
    upload_params_per_client: int
    download_params_per_client: int
    upload_params_total: int
    download_params_total: int
    upload_bytes_per_client: int
    download_bytes_per_client: int
    expected_upload: int
    expected_download: int
    val_recall: float
    val_mrr: float
    val_ndcg: float
    wall_time: float = 0.0

    # columns excluded from the CSV so identical runs give identical files
    NONDETERMINISTIC = ("wall_time",)

    @classmethod
    def csv_columns(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name not in cls.NONDETERMINISTIC]


@dataclass
class RunResult:
    method: str
    reports: list[RoundReport]
    test: dict
    models: list = field(default_factory=list, repr=False)
    server: ServerState | None = field(default=None, repr=False)

    @property
    def final(self) -> RoundReport:
        return self.reports[-1]


def prepare_data(config: ExperimentConfig) -> tuple[InteractionDataset, SemanticVectors | None]:
    ds = load_dataset(config.dataset_path, config.dataset_format)
    ds = split_dataset(ds, seed=config.seed)
    if config.noise_ratio > 0:
        ds = inject_click_noise(ds, config.noise_ratio, _rng(config.seed, _CLICKS))
    ds = partition_clients(ds, config.n_clients, seed=config.seed)
    sv = None
    if config.method == "rqfedrec":
        sv = semantic_for(config, ds)
    return ds, sv


def semantic_for(config: ExperimentConfig, ds: InteractionDataset) -> SemanticVectors:
    if config.semantic == "synthetic":
        return synthesize_semantic_vectors(ds.n_items, config.d_sem, seed=config.seed)
    return load_semantic_vectors(config.semantic, ds)


def _evaluate(models, ds, config, t):
    if t % config.eval_every and t != config.rounds:
        return {"recall": float("nan"), "mrr": float("nan"), "ndcg": float("nan")}
    return evaluate(models, ds, "val", K=config.top_k)


def run_rqfedrec(config: ExperimentConfig, ds: InteractionDataset | None = None,
                 sv: SemanticVectors | None = None) -> RunResult:
    """Dual-channel codebook federation for ``config.rounds`` rounds."""
    if ds is None:
        ds, sv = prepare_data(config)
    if sv is None:
        sv = semantic_for(config, ds)
    config.warn_if_inefficient(ds.n_items)
    seed = config.seed
    server = ServerState(ServerConfig(M=config.M, L=config.L, d=config.d, tau=config.tau,
                                      T_warm=config.T_warm, kmeans_iters=config.kmeans_iters))
    server.bootstrap_semantic(sv, seed=seed)
    clients = [make_client(ds, k, config.d, _rng(seed, _INIT, 0, k), lr=config.lr,
                           weight_decay=config.weight_decay) for k in sorted(ds.partition)]
    semantic_codes: CodeAssignment | None = None
    collab_codes: CodeAssignment | None = None
    reports = []

    for t in range(1, config.rounds + 1):
        start = time.perf_counter()
        try:
            wire_down = server.build_broadcast().to_bytes()
            down_params = Broadcast.parameters_in(wire_down)
            bc = Broadcast.from_bytes(wire_down)
            if bc.semantic_codes is not None:
                semantic_codes = CodeAssignment(bc.semantic_codes, config.M)
            if bc.collaborative_codes is not None:
                collab_codes = CodeAssignment(bc.collaborative_codes, config.M)
            g_sem = CodebookSet(bc.semantic, SEMANTIC)
            g_col = None if bc.collaborative is None else CodebookSet(bc.collaborative, COLLABORATIVE)
            id_channels = int(bc.semantic_codes is not None) + int(bc.collaborative_codes is not None)

            packets, local_losses, distill_losses, up_params, up_bytes = [], [], [], set(), set()
            for client in clients:
                k = client.client_id
                receive_codebooks(client, g_sem, g_col, semantic_codes, collab_codes)
                refresh_items(client, g_sem, g_col, bc.lam)
                losses = local_train(client, config.local_epochs, _rng(seed, _TRAIN, t, k),
                                     neg_ratio=config.neg_ratio, batch_size=config.batch_size)
                perturb_items(client, config.delta, _rng(seed, _NOISE, t, k))
                curve = train_codebooks(client, bc.lam, steps=config.codebook_steps, lr=config.codebook_lr)
                wire_up = build_upload(client).to_bytes()
                up_params.add(UploadPacket.parameters_in(wire_up))
                up_bytes.add(len(wire_up))
                packets.append(UploadPacket.from_bytes(wire_up))
                if len(client.train):
                    local_losses.append(losses[-1])
                if curve:
                    distill_losses.append(curve[-1])

            server.aggregate(packets)
            if t % config.tau == 0:
                server.refresh_collaborative_codes(seed=[seed, _SERVER, t])
            val = _evaluate([c.model for c in clients], ds, config, t)
        except Exception as exc:
            raise SimulationError(f"round {t}: {exc}") from exc

        if len(up_params) != 1 or len(up_bytes) != 1:
            raise SimulationError(f"round {t}: clients uploaded differently sized packets")
        expected = round_counts(ds.n_items, config.d, config.M, config.L,
                                codebook_channels=1 + int(g_col is not None), id_channels=id_channels)
        up = up_params.pop()
        reports.append(RoundReport(
            round=t, lam=bc.lam,
            local_loss=_mean(local_losses), distill_loss=_mean(distill_losses),
            upload_params_per_client=up, download_params_per_client=down_params,
            upload_params_total=up * len(clients), download_params_total=down_params * len(clients),
            upload_bytes_per_client=up_bytes.pop(), download_bytes_per_client=len(wire_down),
            expected_upload=expected["upload"], expected_download=expected["download"],
            val_recall=val["recall"], val_mrr=val["mrr"], val_ndcg=val["ndcg"],
            wall_time=time.perf_counter() - start,
        ))
        logger.info("rqfedrec round %d lam=%.2f loss=%.4f distill=%.5f val_ndcg=%.4f",
                    t, bc.lam, reports[-1].local_loss, reports[-1].distill_loss, val["ndcg"])

    models = [c.model for c in clients]
    return RunResult("rqfedrec", reports, evaluate(models, ds, "test", K=config.top_k), models, server)


def run_baseline_local(config: ExperimentConfig, ds: InteractionDataset | None = None) -> RunResult:
    """Per-client MF with no communication."""
    if ds is None:
        ds, _ = prepare_data(config)
    seed = config.seed
    clients = [make_client(ds, k, config.d, _rng(seed, _INIT, 0, k), lr=config.lr,
                           weight_decay=config.weight_decay) for k in sorted(ds.partition)]
    reports = []
    for t in range(1, config.rounds + 1):
        start = time.perf_counter()
        losses = []
        for client in clients:
            out = local_train(client, config.local_epochs, _rng(seed, _TRAIN, t, client.client_id),
                              neg_ratio=config.neg_ratio, batch_size=config.batch_size)
            if len(client.train):
                losses.append(out[-1])
        val = _evaluate([c.model for c in clients], ds, config, t)
        reports.append(_plain_report(t, losses, 0, 0, 0, val, start))
    models = [c.model for c in clients]
    return RunResult("local", reports, evaluate(models, ds, "test", K=config.top_k), models)


def run_baseline_fedmf(config: ExperimentConfig, ds: InteractionDataset | None = None) -> RunResult:
    """Clients upload their full item table; the server takes the sample-weighted mean."""
    if ds is None:
        ds, _ = prepare_data(config)
    seed = config.seed
    clients = [make_client(ds, k, config.d, _rng(seed, _INIT, 0, k), lr=config.lr,
                           weight_decay=config.weight_decay) for k in sorted(ds.partition)]
    global_items = _rng(seed, _SERVER).normal(0.0, 0.01, size=(ds.n_items, config.d))
    weights = np.array([c.sample_weight for c in clients], dtype=np.float64)
    if weights.sum() <= 0:
        raise SimulationError("no training data on any client")
    weights /= weights.sum()
    reports = []
    for t in range(1, config.rounds + 1):
        start = time.perf_counter()
        losses = []
        new_items = np.zeros_like(global_items)
        for client, w in zip(clients, weights):
            set_item_table(client.model, global_items)
            out = local_train(client, config.local_epochs, _rng(seed, _TRAIN, t, client.client_id),
                              neg_ratio=config.neg_ratio, batch_size=config.batch_size)
            if len(client.train):
                losses.append(out[-1])
            new_items += w * client.model.item_table
        global_items = new_items
        val = _evaluate([c.model for c in clients], ds, config, t)
        n = comm_account("fedmf", ds.n_items, config.d)
        reports.append(_plain_report(t, losses, n["upload"], n["download"], len(clients), val, start))
    models = [c.model for c in clients]
    return RunResult("fedmf", reports, evaluate(models, ds, "test", K=config.top_k), models)


def _plain_report(t, losses, up, down, n_clients, val, start) -> RoundReport:
    return RoundReport(
        round=t, lam=0.0, local_loss=_mean(losses), distill_loss=float("nan"),
        upload_params_per_client=up, download_params_per_client=down,
        upload_params_total=up * n_clients, download_params_total=down * n_clients,
        upload_bytes_per_client=up * 8, download_bytes_per_client=down * 8,
        expected_upload=up, expected_download=down,
        val_recall=val["recall"], val_mrr=val["mrr"], val_ndcg=val["ndcg"],
        wall_time=time.perf_counter() - start,
    )


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else 0.0


RUNNERS = {"rqfedrec": run_rqfedrec, "fedmf": run_baseline_fedmf, "local": run_baseline_local}


def run(config: ExperimentConfig, ds: InteractionDataset | None = None,
        sv: SemanticVectors | None = None) -> RunResult:
    config.validate()
    if config.method == "rqfedrec":
        return run_rqfedrec(config, ds, sv)
    return RUNNERS[config.method](config, ds)


def _metric_row(result: RunResult) -> dict:
    return {"recall": result.test["recall"], "mrr": result.test["mrr"], "ndcg": result.test["ndcg"]}


def run_noise_robustness(config: ExperimentConfig, ratios) -> list[dict]:
    """Test metrics of RQFedRec and FedMF after injecting each ratio of fake clicks."""
    ratios = [float(r) for r in ratios]
    if any(not 0.0 <= r <= 1.0 for r in ratios):
        raise ValueError("noise ratios must lie in [0, 1]")
    rows = []
    for ratio in ratios:
        for method in ("fedmf", "rqfedrec"):
            cfg = config.with_overrides(noise_ratio=ratio, method=method)
            result = run(cfg)
            rows.append({"noise_ratio": ratio, "method": method, **_metric_row(result)})
    return rows


def run_dp_sweep(config: ExperimentConfig, deltas) -> list[dict]:
    """RQFedRec test metrics for each Laplace scale, sharing one prepared dataset."""
    cfg0 = config.with_overrides(method="rqfedrec")
    ds, sv = prepare_data(cfg0)
    rows = []
    for delta in deltas:
        if delta < 0:
            raise ValueError("delta must be >= 0")
        result = run(cfg0.with_overrides(delta=float(delta)), ds, sv)
        rows.append({"delta": float(delta), **_metric_row(result)})
    return rows


def write_reports_csv(reports: list[RoundReport], path) -> None:
    cols = RoundReport.csv_columns()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in reports:
            writer.writerow([_fmt(getattr(r, c)) for c in cols])


def _fmt(x):
    return repr(x) if isinstance(x, float) else x


def write_table_csv(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def write_summary_json(result: RunResult, config: ExperimentConfig, path) -> None:
    summary = {
        "method": result.method,
        "rounds": len(result.reports),
        "test": result.test,
        "final_round": asdict(result.final) if result.reports else None,
        "total_wall_time": sum(r.wall_time for r in result.reports),
        "config": config.to_dict(),
    }
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
