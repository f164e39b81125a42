"""Statistics for four-alternative forced-choice (4-AFC) listening tests.

Covers the full analysis chain for a panel of raters labeling clips
against four candidates each: Fleiss' kappa agreement, per-trial consensus
and accuracy, a two-sided paired t-test on per-trial accuracy differences,
and seeded percentile-bootstrap confidence intervals.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import betainc

logger = logging.getLogger(__name__)

NUM_CANDIDATES = 4


class StatsError(Exception):
    """Raised for malformed trial tables or invalid statistic inputs."""


class DegenerateAgreementError(StatsError):
    """All rating mass sits in one category; kappa is undefined."""


# ---------------------------------------------------------------------------
# Trial tables
# ---------------------------------------------------------------------------


@dataclass
class Trial:
    clip_id: str
    candidates: tuple[str, str, str, str]
    target_index: int
    responses: dict[str, int] = field(default_factory=dict)  # rater -> choice


@dataclass
class TrialTable:
    trials: list[Trial]
    raters: list[str]  # order of first appearance


def load_trial_table(path: str) -> TrialTable:
    """Read a long-format CSV: one row per (clip, rater) response.

    Header: ``clip_id,target_index,candidate0,candidate1,candidate2,
    candidate3,rater,choice``.
    """
    trials: dict[str, Trial] = {}
    raters: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {
            "clip_id", "target_index", "candidate0", "candidate1",
            "candidate2", "candidate3", "rater", "choice",
        }
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise StatsError(f"{path}: missing columns {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            clip_id = row["clip_id"]
            candidates = tuple(row[f"candidate{i}"] for i in range(NUM_CANDIDATES))
            try:
                target = int(row["target_index"])
                choice = int(row["choice"])
            except ValueError as exc:
                raise StatsError(f"{path}:{lineno}: non-integer index: {exc}") from exc
            if not 0 <= target < NUM_CANDIDATES or not 0 <= choice < NUM_CANDIDATES:
                raise StatsError(f"{path}:{lineno}: index outside 0..3")
            if clip_id not in trials:
                trials[clip_id] = Trial(clip_id, candidates, target)
            else:
                known = trials[clip_id]
                if known.candidates != candidates or known.target_index != target:
                    raise StatsError(
                        f"{path}:{lineno}: inconsistent candidates/target for {clip_id!r}"
                    )
            rater = row["rater"]
            if rater in trials[clip_id].responses:
                raise StatsError(f"{path}:{lineno}: duplicate response {rater!r}/{clip_id!r}")
            trials[clip_id].responses[rater] = choice
            if rater not in raters:
                raters.append(rater)
    return TrialTable(list(trials.values()), raters)


def response_counts(table: TrialTable) -> np.ndarray:
    """Per-trial response counts over the 4 categories (rows sum to the
    number of raters who answered that trial)."""
    counts = np.zeros((len(table.trials), NUM_CANDIDATES), dtype=np.int64)
    for i, trial in enumerate(table.trials):
        for choice in trial.responses.values():
            counts[i, choice] += 1
    return counts


# ---------------------------------------------------------------------------
# Fleiss' kappa
# ---------------------------------------------------------------------------


def fleiss_kappa(counts: np.ndarray, n_raters: int) -> float:
    """Fleiss' kappa for a trials x categories count matrix.

    kappa = (P_bar - P_bar_e) / (1 - P_bar_e), with per-item agreement
    P_i = (sum_j n_ij^2 - n) / (n (n - 1)) and chance agreement
    P_bar_e = sum_j p_j^2 from the column proportions p_j.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] < 1:
        raise StatsError("counts must be a non-empty 2-D matrix")
    if n_raters < 2:
        raise StatsError(f"kappa needs at least 2 raters, got {n_raters}")
    row_sums = counts.sum(axis=1)
    if not np.all(row_sums == n_raters):
        bad = int(np.argmax(row_sums != n_raters))
        raise StatsError(
            f"row {bad} sums to {int(row_sums[bad])}, expected n = {n_raters}"
        )
    n_items = counts.shape[0]
    p_i = (np.square(counts).sum(axis=1) - n_raters) / (n_raters * (n_raters - 1))
    p_bar = float(p_i.mean())
    p_j = counts.sum(axis=0) / (n_items * n_raters)
    p_bar_e = float(np.square(p_j).sum())
    if p_bar_e == 1.0:
        raise DegenerateAgreementError(
            "all ratings fall in a single category; kappa is undefined"
        )
    return (p_bar - p_bar_e) / (1.0 - p_bar_e)


def kappa_from_trials(table: TrialTable) -> tuple[float, list[str]]:
    """Fleiss' kappa over the trials answered by the full panel.

    Trials with missing raters are excluded (kappa requires an equal rater
    count per item); their clip ids are returned and logged.
    """
    full = len(table.raters)
    complete = [t for t in table.trials if len(t.responses) == full]
    excluded = [t.clip_id for t in table.trials if len(t.responses) != full]
    if excluded:
        logger.warning(
            "excluding %d trial(s) with missing raters from kappa: %s",
            len(excluded),
            excluded,
        )
    if not complete:
        raise StatsError("no trials with responses from every rater")
    counts = response_counts(TrialTable(complete, table.raters))
    return fleiss_kappa(counts, full), excluded


# ---------------------------------------------------------------------------
# Consensus and accuracy
# ---------------------------------------------------------------------------


@dataclass
class ConsensusReport:
    consensus: list[int | None]  # per trial; None = tie (flagged)
    per_rater_accuracy: dict[str, float]
    mean_accuracy: float
    h: list[float]  # per-trial fraction of responding raters matching target
    tie_trials: list[str]


def consensus_and_accuracy(table: TrialTable) -> ConsensusReport:
    """Majority consensus per trial plus rater- and trial-level accuracy.

    Consensus ties are flagged and excluded from downstream pairing.  The
    per-trial accuracy h_i divides by the raters who actually answered
    that trial, so panels with dropouts remain well-defined.
    """
    consensus: list[int | None] = []
    h: list[float] = []
    tie_trials: list[str] = []
    for trial in table.trials:
        if not trial.responses:
            raise StatsError(f"trial {trial.clip_id!r} has no responses")
        counts = np.bincount(list(trial.responses.values()), minlength=NUM_CANDIDATES)
        best = counts.max()
        winners = np.flatnonzero(counts == best)
        if len(winners) == 1:
            consensus.append(int(winners[0]))
        else:
            consensus.append(None)
            tie_trials.append(trial.clip_id)
        matches = sum(1 for c in trial.responses.values() if c == trial.target_index)
        h.append(matches / len(trial.responses))

    per_rater: dict[str, float] = {}
    for rater in table.raters:
        answered = [t for t in table.trials if rater in t.responses]
        if answered:
            correct = sum(1 for t in answered if t.responses[rater] == t.target_index)
            per_rater[rater] = correct / len(answered)
    mean_accuracy = float(np.mean(list(per_rater.values()))) if per_rater else math.nan
    return ConsensusReport(consensus, per_rater, mean_accuracy, h, tie_trials)


# ---------------------------------------------------------------------------
# Paired t-test
# ---------------------------------------------------------------------------


@dataclass
class TTestResult:
    t: float
    p: float
    df: int
    degenerate: bool = False


def student_t_sf2(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t via the regularized
    incomplete beta function: p = I_{df/(df+t^2)}(df/2, 1/2).

    Accuracy target 1e-10 over the tabulated range (validated in tests
    against reference quantiles).
    """
    if df < 1:
        raise StatsError(f"degrees of freedom must be >= 1, got {df}")
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


def paired_t_test(b: Sequence[float], h: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on differences d = b - h.

    t = mean(d) / (sd(d)/sqrt(n)) with the n-1 variance denominator.
    Zero-variance differences are degenerate: p = 1 when mean(d) = 0,
    else p = 0, flagged.
    """
    b_arr = np.asarray(b, dtype=np.float64)
    h_arr = np.asarray(h, dtype=np.float64)
    if b_arr.shape != h_arr.shape or b_arr.ndim != 1:
        raise StatsError("b and h must be 1-D sequences of equal length")
    n = b_arr.size
    if n < 2:
        raise StatsError(f"paired t-test needs n >= 2, got {n}")
    d = b_arr - h_arr
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, df=df, degenerate=True)
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0, df=df, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, p=student_t_sf2(t, df), df=df)


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def bootstrap_percentile_ci(
    values: Sequence[float],
    statistic: Callable[[np.ndarray], float] = np.mean,
    resamples: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap CI: resample values with replacement at the
    clip level, recompute the statistic, take the (2.5, 97.5) percentiles.
    Deterministic for a fixed seed."""
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        raise StatsError("bootstrap requires non-empty values")
    if not 0.0 < level < 1.0:
        raise StatsError(f"level must be in (0, 1), got {level}")
    rng = np.random.Generator(np.random.PCG64(seed))
    stats = np.empty(resamples, dtype=np.float64)
    n = data.size
    for i in range(resamples):
        stats[i] = statistic(data[rng.integers(0, n, n)])
    lo, hi = np.percentile(stats, [(1 - level) / 2 * 100, (1 + level) / 2 * 100])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Assembled report
# ---------------------------------------------------------------------------


@dataclass
class StatReport:
    mean_rater_accuracy: float
    consensus_labels: dict[str, str | None]
    fleiss_kappa: float
    kappa_excluded_trials: list[str]
    t_stat: float
    p_value: float
    degenerate_t: bool
    ci: tuple[float, float]

    def to_json(self) -> str:
        return json.dumps(
            {
                "mean_rater_accuracy": self.mean_rater_accuracy,
                "consensus_labels": self.consensus_labels,
                "fleiss_kappa": self.fleiss_kappa,
                "kappa_excluded_trials": self.kappa_excluded_trials,
                "t_stat": self.t_stat,
                "p_value": self.p_value,
                "degenerate_t": self.degenerate_t,
                "ci_low": self.ci[0],
                "ci_high": self.ci[1],
            },
            indent=2,
            sort_keys=True,
        )


def build_stat_report(
    table: TrialTable, resamples: int = 10_000, seed: int = 0
) -> StatReport:
    """Full 4-AFC analysis of one trial table.

    The paired test compares, per trial, the consensus-correct indicator
    b_i against the rater-accuracy fraction h_i; consensus-tie trials are
    excluded from the pairing.  The CI is a percentile bootstrap over the
    per-trial differences d_i = b_i - h_i.
    """
    report = consensus_and_accuracy(table)
    kappa, excluded = kappa_from_trials(table)
    b, h = [], []
    consensus_labels: dict[str, str | None] = {}
    for trial, consensus, h_i in zip(table.trials, report.consensus, report.h):
        consensus_labels[trial.clip_id] = (
            trial.candidates[consensus] if consensus is not None else None
        )
        if consensus is not None:
            b.append(1.0 if consensus == trial.target_index else 0.0)
            h.append(h_i)
    ttest = paired_t_test(b, h)
    d = np.asarray(b) - np.asarray(h)
    ci = bootstrap_percentile_ci(d, np.mean, resamples=resamples, seed=seed)
    return StatReport(
        mean_rater_accuracy=report.mean_accuracy,
        consensus_labels=consensus_labels,
        fleiss_kappa=kappa,
        kappa_excluded_trials=excluded,
        t_stat=ttest.t,
        p_value=ttest.p,
        degenerate_t=ttest.degenerate,
        ci=ci,
    )
