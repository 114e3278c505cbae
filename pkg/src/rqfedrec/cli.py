"""Command-line entry point.

Subcommands:

``run``            one experiment from a JSON config, with flag overrides
``account``        closed-form communication table
``verify-theory``  Monte-Carlo checks of the noise-averaging laws
``noise-sweep``    RQFedRec vs FedMF under injected fake clicks
``dp-sweep``       RQFedRec under a grid of Laplace scales

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure
(including a failed verification).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .simulator import accounting, runner, theory

OUTPUT_ROOT_ENV = "RQFEDREC_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

logger = logging.getLogger("rqfedrec")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _pair(text: str) -> tuple[int, int]:
    values = _int_list(text.replace(":", ","))
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"expected N_I:N_C, got {text!r}")
    return values[0], values[1]


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="JSON config file (fields default when omitted)")
    p.add_argument("--method", choices=("rqfedrec", "fedmf", "local"))
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--dataset", dest="dataset_path", help="interaction file")
    p.add_argument("--output-dir")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rqfedrec", description="Federated recommendation with residual-quantized codebooks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every round")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one experiment")
    _add_config_args(p)

    p = sub.add_parser("account", help="print the communication resource table")
    p.add_argument("--dataset", action="append", choices=sorted(accounting.PRESETS),
                   help="preset dims; repeatable (default: all presets)")
    p.add_argument("--n-items", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--L", type=int, default=3)
    p.add_argument("--channels", type=int, default=2)

    p = sub.add_parser("verify-theory", help="Monte-Carlo noise-energy checks")
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--pairs", type=_pair, nargs="+", default=[(1, 1), (4, 16), (8, 64)],
                   metavar="N_I:N_C")
    p.add_argument("--levels", type=_int_list, nargs="+", default=[[2, 2, 2], [4, 8]],
                   metavar="N1,N2,...")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=0.10, help="relative tolerance")

    p = sub.add_parser("noise-sweep", help="fake-click robustness table")
    _add_config_args(p)
    p.add_argument("--ratios", type=_float_list, default=[0.0, 0.1, 0.2, 0.3])

    p = sub.add_parser("dp-sweep", help="Laplace-scale sweep table")
    _add_config_args(p)
    p.add_argument("--deltas", type=_float_list, default=[0.0, 0.02, 0.04, 0.06, 0.08])
    return parser


def resolve_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(key or "--set", "expected KEY=VALUE")
        overrides[key.strip()] = value.strip()
    for name in ("method", "seed", "rounds", "dataset_path", "output_dir"):
        if getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    config = config.with_overrides(**overrides)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not Path(config.output_dir).is_absolute():
        config = config.with_overrides(output_dir=str(Path(root) / config.output_dir))
    return config.validate()


def _prepare_output(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.render())
    return out


def save_artifacts(result: runner.RunResult, out: Path) -> None:
    """Final codebooks as ``.npy`` arrays (shape in the header) and code IDs as CSV."""
    server = result.server
    if server is None:
        return
    np.save(out / "codebooks_semantic.npy", server.global_semantic.levels)
    (out / "codes_semantic.csv").write_text(server.semantic_codes.to_csv())
    if server.global_collaborative is not None:
        np.save(out / "codebooks_collaborative.npy", server.global_collaborative.levels)
    if server.collaborative_codes is not None:
        (out / "codes_collaborative.csv").write_text(server.collaborative_codes.to_csv())


def cmd_run(args) -> int:
    config = resolve_config(args)
    out = _prepare_output(config)
    result = runner.run(config)
    runner.write_reports_csv(result.reports, out / "reports.csv")
    runner.write_summary_json(result, config, out / "summary.json")
    save_artifacts(result, out)
    t = result.test
    print(f"{result.method}: test recall@{config.top_k}={t['recall']:.4f} "
          f"mrr@{config.top_k}={t['mrr']:.4f} ndcg@{config.top_k}={t['ndcg']:.4f} -> {out}")
    return EXIT_OK


def account_dims(args) -> list[accounting.DatasetDims]:
    custom = [args.n_items, args.d, args.M]
    if any(v is not None for v in custom):
        if any(v is None for v in custom):
            raise ConfigError("account", "--n-items, --d and --M must be given together")
        if min(args.n_items, args.d, args.M, args.L, args.channels) < 1:
            raise ConfigError("account", "dimensions must be positive")
        return [accounting.DatasetDims("custom", args.n_items, args.d, args.M, args.L)]
    names = args.dataset or list(accounting.PRESETS)
    return [accounting.PRESETS[name] for name in names]


def format_account(dims: list[accounting.DatasetDims], channels: int = 2) -> str:
    header = ("dataset", "method", "parameter", "upload", "resource", "percentage")
    rows = []
    for dim in dims:
        fed = accounting.comm_account("fedmf", dim.n_items, dim.d)
        rq = accounting.comm_account("rqfedrec", dim.n_items, dim.d, dim.M, dim.L, channels)
        pct = accounting.percentage(rq["download"], fed["download"])
        rows.append((dim.name, "FedMF", f"d={dim.d}, n_i={dim.n_items}",
                     fed["upload"], fed["download"], "100%"))
        rows.append((dim.name, "RQFedRec", f"d={dim.d}, M={dim.M}, L={dim.L}",
                     rq["upload"], rq["download"], f"{pct}%"))
    table = [header] + [tuple(str(c) for c in row) for row in rows]
    widths = [max(len(row[j]) for row in table) for j in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table)


def cmd_account(args) -> int:
    print(format_account(account_dims(args), args.channels))
    return EXIT_OK


def theory_rows(args) -> list[dict]:
    rng = np.random.default_rng(args.seed)
    tol = args.tolerance
    rows = []
    for n_i, n_c in args.pairs:
        tr = theory.verify_theorem1(args.sigma2, n_i, n_c, args.trials, args.d, rng)
        ok = (abs(tr.id_energy - tr.expected_id) <= tol * tr.expected_id
              and abs(tr.code_energy - tr.expected_code) <= tol * tr.expected_code
              and tr.code_energy <= tr.id_energy)
        rows.append({"check": f"id vs code n_i={n_i} n_c={n_c}",
                     "expected": f"{tr.expected_id:.4f} / {tr.expected_code:.4f}",
                     "empirical": f"{tr.id_energy:.4f} / {tr.code_energy:.4f}", "ok": ok})
    for counts in args.levels:
        tr = theory.verify_multilevel_bound(args.sigma2, counts, args.trials, args.d, rng)
        ok = abs(tr.code_energy - tr.bound) <= tol * tr.bound and tr.code_energy <= tr.bound + 3 * tr.code_se
        rows.append({"check": f"levels {','.join(map(str, counts))} n_eff={tr.n_eff:.4g}",
                     "expected": f"{tr.bound:.4f}",
                     "empirical": f"{tr.code_energy:.4f} +- {tr.code_se:.4f}", "ok": ok})
    return rows


def cmd_verify_theory(args) -> int:
    if args.trials < 1000 or args.d < 1 or args.sigma2 <= 0:
        raise ConfigError("verify-theory", "need trials >= 1000, d >= 1 and sigma2 > 0")
    for n_i, n_c in args.pairs:
        if not n_c >= n_i >= 1:
            raise ConfigError("pairs", f"need n_c >= n_i >= 1, got {n_i}:{n_c}")
    for counts in args.levels:
        if not counts or min(counts) < 1:
            raise ConfigError("levels", "every level needs at least one contributor")
    rows = theory_rows(args)
    width = max(len(r["check"]) for r in rows)
    for r in rows:
        print(f"{r['check'].ljust(width)}  expected {r['expected']}  got {r['empirical']}  "
              f"{'PASS' if r['ok'] else 'FAIL'}")
    return EXIT_OK if all(r["ok"] for r in rows) else EXIT_RUNTIME


def cmd_noise_sweep(args) -> int:
    config = resolve_config(args)
    out = _prepare_output(config)
    rows = runner.run_noise_robustness(config, args.ratios)
    runner.write_table_csv(rows, out / "noise_sweep.csv")
    for row in rows:
        print(f"ratio={row['noise_ratio']:.2f} {row['method']:8s} recall={row['recall']:.4f} "
              f"mrr={row['mrr']:.4f} ndcg={row['ndcg']:.4f}")
    return EXIT_OK


def cmd_dp_sweep(args) -> int:
    config = resolve_config(args)
    out = _prepare_output(config)
    rows = runner.run_dp_sweep(config, args.deltas)
    runner.write_table_csv(rows, out / "dp_sweep.csv")
    for row in rows:
        print(f"delta={row['delta']:.3f} recall={row['recall']:.4f} mrr={row['mrr']:.4f} ndcg={row['ndcg']:.4f}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "account": cmd_account,
    "verify-theory": cmd_verify_theory,
    "noise-sweep": cmd_noise_sweep,
    "dp-sweep": cmd_dp_sweep,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"rqfedrec: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"rqfedrec: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure maps to the runtime exit code
        logger.debug("command failed", exc_info=True)
        print(f"rqfedrec: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
