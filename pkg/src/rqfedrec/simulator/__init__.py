"""Orchestration, baselines, metrics, communication accounting and theory checks."""
from .accounting import PRESETS, comm_account, percentage, resource_table, round_counts
from .metrics import evaluate
from .runner import (
    RoundReport,
    RunResult,
    SimulationError,
    prepare_data,
    run,
    run_baseline_fedmf,
    run_baseline_local,
    run_dp_sweep,
    run_noise_robustness,
    run_rqfedrec,
    write_reports_csv,
    write_summary_json,
    write_table_csv,
)
from .theory import TheoryTrial, effective_contributions, verify_multilevel_bound, verify_theorem1
