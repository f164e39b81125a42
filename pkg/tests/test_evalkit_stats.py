"""4-AFC statistics: trial tables, Fleiss' kappa, t-test, bootstrap."""

import json
import math

import numpy as np
import pytest
import scipy.stats

from puremix.evalkit import (
    DegenerateAgreementError,
    StatsError,
    Trial,
    TrialTable,
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

CANDS = ("rain", "dog", "cat", "wind")


def make_trial(clip_id, target, choices, cands=CANDS):
    """choices: dict rater -> index, or a list assigned to r0, r1, ..."""
    if isinstance(choices, list):
        choices = {f"r{i}": c for i, c in enumerate(choices)}
    return Trial(clip_id, cands, target, dict(choices))


def write_table_csv(path, rows):
    header = "clip_id,target_index,candidate0,candidate1,candidate2,candidate3,rater,choice"
    path.write_text(header + "\n" + "\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# Trial table loading
# ---------------------------------------------------------------------------


def test_load_trial_table_happy_path(tmp_path):
    path = tmp_path / "trials.csv"
    write_table_csv(
        path,
        [
            "c1,0,rain,dog,cat,wind,alice,0",
            "c1,0,rain,dog,cat,wind,bob,1",
            "c2,2,rain,dog,cat,wind,bob,2",
            "c2,2,rain,dog,cat,wind,alice,2",
        ],
    )
    table = load_trial_table(str(path))
    assert [t.clip_id for t in table.trials] == ["c1", "c2"]
    assert table.raters == ["alice", "bob"]  # first-appearance order
    assert table.trials[0].responses == {"alice": 0, "bob": 1}
    assert table.trials[1].candidates == CANDS
    counts = response_counts(table)
    assert counts.tolist() == [[1, 1, 0, 0], [0, 0, 2, 0]]


def test_load_trial_table_errors(tmp_path):
    path = tmp_path / "bad.csv"

    path.write_text("clip_id,rater,choice\nc1,a,0\n")
    with pytest.raises(StatsError, match="missing columns"):
        load_trial_table(str(path))

    write_table_csv(path, ["c1,zero,rain,dog,cat,wind,a,0"])
    with pytest.raises(StatsError, match=r"bad\.csv:2: non-integer index"):
        load_trial_table(str(path))

    write_table_csv(path, ["c1,0,rain,dog,cat,wind,a,4"])
    with pytest.raises(StatsError, match=r"index outside 0\.\.3"):
        load_trial_table(str(path))

    write_table_csv(
        path,
        ["c1,0,rain,dog,cat,wind,a,0", "c1,1,rain,dog,cat,wind,b,0"],
    )
    with pytest.raises(StatsError, match="inconsistent candidates/target"):
        load_trial_table(str(path))

    write_table_csv(
        path,
        ["c1,0,rain,dog,cat,wind,a,0", "c1,0,rain,dog,cat,wind,a,1"],
    )
    with pytest.raises(StatsError, match="duplicate response"):
        load_trial_table(str(path))


# ---------------------------------------------------------------------------
# Fleiss' kappa
# ---------------------------------------------------------------------------


def reference_fleiss_kappa(counts, n):
    """Plain-Python textbook Fleiss: independent of the numpy implementation."""
    n_items = len(counts)
    p_bar = 0.0
    for row in counts:
        p_bar += (sum(c * c for c in row) - n) / (n * (n - 1))
    p_bar /= n_items
    total = n_items * n
    p_e = sum((sum(row[j] for row in counts) / total) ** 2 for j in range(len(counts[0])))
    return (p_bar - p_e) / (1.0 - p_e)


def test_kappa_perfect_agreement_multi_category():
    # every trial unanimous, but across different categories -> exactly 1.0
    counts = np.array([[5, 0, 0, 0], [0, 5, 0, 0], [0, 0, 5, 0], [0, 0, 0, 5]])
    assert fleiss_kappa(counts, 5) == 1.0


def test_kappa_minus_one_on_two_rater_splits():
    # P_i = 0 everywhere and P_e = 0.5 -> kappa = -1 exactly
    counts = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [1, 1, 0, 0]])
    assert fleiss_kappa(counts, 2) == -1.0


def test_kappa_textbook_table():
    # classic 10-item, 14-rater, 5-category agreement table
    counts = [
        [0, 0, 0, 0, 14],
        [0, 2, 6, 4, 2],
        [0, 0, 3, 5, 6],
        [0, 3, 9, 2, 0],
        [2, 2, 8, 1, 1],
        [7, 7, 0, 0, 0],
        [3, 2, 6, 3, 0],
        [2, 5, 3, 2, 2],
        [6, 5, 2, 1, 0],
        [0, 2, 2, 3, 7],
    ]
    kappa = fleiss_kappa(np.array(counts), 14)
    assert kappa == pytest.approx(0.20993, abs=1e-4)
    assert kappa == pytest.approx(reference_fleiss_kappa(counts, 14), abs=1e-12)


def test_kappa_matches_reference_on_random_tables():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n_items = int(rng.integers(2, 12))
        n_raters = int(rng.integers(2, 9))
        counts = rng.multinomial(n_raters, [0.4, 0.3, 0.2, 0.1], size=n_items)
        if np.square(counts.sum(axis=0) / counts.sum()).sum() == 1.0:
            continue  # degenerate draw
        got = fleiss_kappa(counts, n_raters)
        want = reference_fleiss_kappa(counts.tolist(), n_raters)
        assert got == pytest.approx(want, abs=1e-12)


def test_kappa_degenerate_single_category():
    counts = np.array([[3, 0, 0, 0], [3, 0, 0, 0]])
    with pytest.raises(DegenerateAgreementError, match="single category"):
        fleiss_kappa(counts, 3)


def test_kappa_input_validation():
    with pytest.raises(StatsError, match="row 1 sums to 2, expected n = 3"):
        fleiss_kappa(np.array([[3, 0, 0, 0], [1, 1, 0, 0]]), 3)
    with pytest.raises(StatsError, match="at least 2 raters"):
        fleiss_kappa(np.array([[1, 0, 0, 0]]), 1)
    with pytest.raises(StatsError, match="non-empty 2-D"):
        fleiss_kappa(np.zeros((0, 4)), 2)


def test_kappa_from_trials_excludes_incomplete(caplog):
    trials = [
        make_trial("full1", 0, {"a": 0, "b": 0, "c": 0}),
        make_trial("part", 0, {"a": 1, "b": 1}),  # rater c missing
        make_trial("full2", 1, {"a": 1, "b": 1, "c": 2}),
    ]
    table = TrialTable(trials, ["a", "b", "c"])
    with caplog.at_level("WARNING"):
        kappa, excluded = kappa_from_trials(table)
    assert excluded == ["part"]
    assert "excluding 1 trial(s)" in caplog.text
    complete = TrialTable([trials[0], trials[2]], table.raters)
    assert kappa == fleiss_kappa(response_counts(complete), 3)


def test_kappa_from_trials_requires_a_complete_trial():
    table = TrialTable([make_trial("only", 0, {"a": 0})], ["a", "b"])
    with pytest.raises(StatsError, match="every rater"):
        kappa_from_trials(table)


# ---------------------------------------------------------------------------
# Consensus and accuracy
# ---------------------------------------------------------------------------


def test_consensus_majority_and_h_fraction():
    # 37 raters: 18 pick the target, 17 a decoy, 2 another decoy
    choices = [0] * 18 + [1] * 17 + [2] * 2
    table = TrialTable([make_trial("big", 0, choices)], [f"r{i}" for i in range(37)])
    report = consensus_and_accuracy(table)
    assert report.consensus == [0]
    assert report.h == [pytest.approx(18 / 37)]
    assert f"{report.h[0] * 100:.2f}" == "48.65"
    assert report.tie_trials == []


def test_consensus_tie_flagged_not_guessed():
    table = TrialTable(
        [make_trial("t", 0, [0, 1]), make_trial("u", 2, [2, 2])], ["r0", "r1"]
    )
    report = consensus_and_accuracy(table)
    assert report.consensus == [None, 2]
    assert report.tie_trials == ["t"]


def test_per_rater_accuracy_over_answered_trials_only():
    trials = [
        make_trial("t1", 0, {"a": 0, "b": 1}),
        make_trial("t2", 1, {"a": 1, "b": 1}),
        make_trial("t3", 2, {"a": 3}),  # b skipped this one
    ]
    table = TrialTable(trials, ["a", "b"])
    report = consensus_and_accuracy(table)
    assert report.per_rater_accuracy["a"] == pytest.approx(2 / 3)
    assert report.per_rater_accuracy["b"] == pytest.approx(1 / 2)
    assert report.mean_accuracy == pytest.approx((2 / 3 + 1 / 2) / 2)
    assert report.h == [pytest.approx(0.5), pytest.approx(1.0), pytest.approx(0.0)]


def test_consensus_rejects_empty_trial():
    table = TrialTable([make_trial("none", 0, {})], [])
    with pytest.raises(StatsError, match="no responses"):
        consensus_and_accuracy(table)


# ---------------------------------------------------------------------------
# Paired t-test
# ---------------------------------------------------------------------------


def test_student_t_tail_textbook_point():
    # t = 2.093 is the 97.5% quantile at 19 degrees of freedom
    assert student_t_sf2(2.093, 19) == pytest.approx(0.05, abs=1e-3)


@pytest.mark.parametrize("df", [1, 5, 19, 30, 200])
@pytest.mark.parametrize("t", [0.0, 0.5, 1.0, 2.093, 4.2, -3.1])
def test_student_t_tail_matches_scipy(t, df):
    want = 2.0 * scipy.stats.t.sf(abs(t), df)
    assert student_t_sf2(t, df) == pytest.approx(want, abs=1e-10)


def test_student_t_rejects_bad_df():
    with pytest.raises(StatsError, match="degrees of freedom"):
        student_t_sf2(1.0, 0)


def test_paired_t_matches_scipy_on_random_data():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(3, 40))
        b = rng.normal(0.6, 0.2, n)
        h = b + rng.normal(0.0, 0.15, n)
        got = paired_t_test(b, h)
        want = scipy.stats.ttest_rel(b, h)
        assert got.t == pytest.approx(want.statistic, abs=1e-10)
        assert got.p == pytest.approx(want.pvalue, abs=1e-10)
        assert got.df == n - 1
        assert not got.degenerate


def test_paired_t_degenerate_cases():
    same = paired_t_test([0.5, 0.5, 0.5], [0.5, 0.5, 0.5])
    assert (same.t, same.p, same.degenerate) == (0.0, 1.0, True)
    shifted = paired_t_test([1.0, 1.0], [0.5, 0.5])
    assert shifted.t == math.inf and shifted.p == 0.0 and shifted.degenerate
    down = paired_t_test([0.0, 0.0], [0.5, 0.5])
    assert down.t == -math.inf


def test_paired_t_input_validation():
    with pytest.raises(StatsError, match="equal length"):
        paired_t_test([1.0, 2.0], [1.0])
    with pytest.raises(StatsError, match="n >= 2"):
        paired_t_test([1.0], [0.5])


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def test_bootstrap_deterministic_for_seed():
    rng = np.random.default_rng(11)
    data = rng.normal(0.1, 0.3, 60)
    a = bootstrap_percentile_ci(data, resamples=2000, seed=42)
    b = bootstrap_percentile_ci(data, resamples=2000, seed=42)
    c = bootstrap_percentile_ci(data, resamples=2000, seed=43)
    assert a == b
    assert a != c


def test_bootstrap_constant_data_collapses():
    assert bootstrap_percentile_ci([0.25] * 10, resamples=500) == (0.25, 0.25)


def test_bootstrap_brackets_sample_mean():
    rng = np.random.default_rng(5)
    data = rng.normal(0.0, 1.0, 120)
    lo, hi = bootstrap_percentile_ci(data, resamples=4000, seed=1)
    assert lo < data.mean() < hi
    # interval width scales like 2 * 1.96 / sqrt(n); sanity-band it
    assert 0.1 < hi - lo < 0.8


def test_bootstrap_validation():
    with pytest.raises(StatsError, match="non-empty"):
        bootstrap_percentile_ci([])
    with pytest.raises(StatsError, match=r"level must be in \(0, 1\)"):
        bootstrap_percentile_ci([1.0], level=1.0)


# ---------------------------------------------------------------------------
# Assembled report
# ---------------------------------------------------------------------------


def test_build_stat_report_integration():
    trials = [
        make_trial("t1", 0, [0, 0, 1]),
        make_trial("t2", 1, [1, 1, 1]),
        make_trial("t3", 2, [3, 3, 2]),
        make_trial("t4", 0, [0, 1, 2]),  # three-way tie
        make_trial("t5", 3, [3, 3, 0]),
    ]
    table = TrialTable(trials, ["r0", "r1", "r2"])
    report = build_stat_report(table, resamples=500, seed=0)

    assert report.consensus_labels == {
        "t1": "rain", "t2": "dog", "t3": "wind", "t4": None, "t5": "wind",
    }
    assert report.kappa_excluded_trials == []
    assert -1.0 <= report.fleiss_kappa <= 1.0
    assert 0.0 <= report.p_value <= 1.0
    assert report.ci[0] <= report.ci[1]

    # t-test pairs exclude the tie trial: b = [1,1,0,1] vs h = [2/3,1,1/3,2/3]
    want = paired_t_test([1.0, 1.0, 0.0, 1.0], [2 / 3, 1.0, 1 / 3, 2 / 3])
    assert report.t_stat == pytest.approx(want.t, abs=1e-12)
    assert report.p_value == pytest.approx(want.p, abs=1e-12)

    parsed = json.loads(report.to_json())
    assert parsed["fleiss_kappa"] == report.fleiss_kappa
    assert parsed["consensus_labels"]["t4"] is None
    assert set(parsed) == {
        "mean_rater_accuracy", "consensus_labels", "fleiss_kappa",
        "kappa_excluded_trials", "t_stat", "p_value", "degenerate_t",
        "ci_low", "ci_high",
    }
