"""Evaluation kit: signal metrics, 4-AFC statistics, dataset reports."""

from .dataset_stats import DatasetReport, dataset_statistics, write_dataset_report
from .metrics import evaluate_pair_files, sdr, si_sdr, write_metric_lines
from .stats import (
    ConsensusReport,
    DegenerateAgreementError,
    StatReport,
    StatsError,
    Trial,
    TrialTable,
    TTestResult,
    bootstrap_percentile_ci,
    build_stat_report,
    consensus_and_accuracy,
    fleiss_kappa,
    kappa_from_trials,
    load_trial_table,
    paired_t_test,
    response_counts,
    student_t_sf2,
)

__all__ = [
    "ConsensusReport",
    "DatasetReport",
    "DegenerateAgreementError",
    "StatReport",
    "StatsError",
    "Trial",
    "TrialTable",
    "TTestResult",
    "bootstrap_percentile_ci",
    "build_stat_report",
    "consensus_and_accuracy",
    "dataset_statistics",
    "evaluate_pair_files",
    "fleiss_kappa",
    "kappa_from_trials",
    "load_trial_table",
    "paired_t_test",
    "response_counts",
    "sdr",
    "si_sdr",
    "student_t_sf2",
    "write_dataset_report",
    "write_metric_lines",
]
