"""Tests for agreement statistics and run summaries."""

from __future__ import annotations

import random

import pytest

from manual2kg.analytics import (
    LabelVector,
    cohens_kappa,
    extract_judge_labels,
    load_labels_from_dir,
    merge_label_vectors,
    render_run_table,
    summarize_runs,
)
from manual2kg.errors import NoOverlap, TaskMismatch
from manual2kg.extraction import Task
from manual2kg.judging import (
    EvaluationReport,
    GuidelineResult,
    correctness_score,
    save_report,
    suite_for,
)
from manual2kg.refinement import IterationRecord, LoopOutcome



def vec(values, rater="r", task=Task.ROADMAP, manual="m"):
    return LabelVector(rater, task, [(manual, f"g{i}", v) for i, v in enumerate(values)])


def kappa_oracle(va: list[int], vb: list[int]) -> float:
    """Independent contingency-table computation of binary Cohen's kappa."""
    n = len(va)
    n11 = sum(1 for x, y in zip(va, vb) if (x, y) == (1, 1))
    n10 = sum(1 for x, y in zip(va, vb) if (x, y) == (1, 0))
    n01 = sum(1 for x, y in zip(va, vb) if (x, y) == (0, 1))
    n00 = sum(1 for x, y in zip(va, vb) if (x, y) == (0, 0))
    p_o = (n11 + n00) / n
    p_e = ((n11 + n10) / n) * ((n11 + n01) / n) + ((n01 + n00) / n) * ((n10 + n00) / n)
    if p_e >= 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1 - p_e)


class TestCohensKappa:
    def test_identical_vectors_agree_perfectly(self):
        rng = random.Random(1)
        for _ in range(20):
            values = [rng.randrange(2) for _ in range(rng.randrange(1, 30))]
            if len(set(values)) < 2:
                continue
            result = cohens_kappa(vec(values), vec(values, rater="s"))
            assert result.kappa == 1.0
            assert result.p_o == 1.0

    def test_hand_worked_example(self):
        a = vec([1, 1, 0, 0, 1])
        b = vec([1, 0, 0, 0, 1], rater="s")
        result = cohens_kappa(a, b)
        assert abs(result.p_o - 0.8) < 1e-12
        assert abs(result.p_e - 0.48) < 1e-12
        assert abs(result.kappa - 0.6154) < 5e-5
        assert abs(result.kappa - kappa_oracle([1, 1, 0, 0, 1], [1, 0, 0, 0, 1])) < 1e-12

    def test_constant_identical_labels_are_degenerate(self):
        result = cohens_kappa(vec([1, 1, 1]), vec([1, 1, 1], rater="s"))
        assert result.degenerate
        assert result.kappa == 1.0
        assert result.p_e == 1.0

    def test_matches_brute_force_oracle_on_random_vectors(self):
        rng = random.Random(42)
        for _ in range(1000):
            n = rng.randrange(1, 21)
            va = [rng.randrange(2) for _ in range(n)]
            vb = [rng.randrange(2) for _ in range(n)]
            result = cohens_kappa(vec(va), vec(vb, rater="s"))
            assert abs(result.kappa - kappa_oracle(va, vb)) < 1e-9
            assert -1.0 <= result.kappa <= 1.0
            assert 0.0 <= result.p_o <= 1.0
            assert 0.0 <= result.p_e <= 1.0

    def test_symmetry(self):
        rng = random.Random(43)
        for _ in range(200):
            n = rng.randrange(1, 21)
            va = [rng.randrange(2) for _ in range(n)]
            vb = [rng.randrange(2) for _ in range(n)]
            ab = cohens_kappa(vec(va), vec(vb, rater="s"))
            ba = cohens_kappa(vec(vb), vec(va, rater="s"))
            assert ab.kappa == ba.kappa
            assert ab.p_o == ba.p_o

    def test_alignment_on_intersection_reports_dropped(self):
        a = LabelVector("a", Task.ROADMAP, [("m1", "g", 1), ("m2", "g", 0), ("m3", "g", 1)])
        b = LabelVector("b", Task.ROADMAP, [("m2", "g", 0), ("m3", "g", 1), ("m4", "g", 1)])
        result = cohens_kappa(a, b)
        assert result.n == 2
        assert result.dropped == 2

    def test_no_overlap(self):
        a = LabelVector("a", Task.ROADMAP, [("m1", "g", 1)])
        b = LabelVector("b", Task.ROADMAP, [("m2", "g", 1)])
        with pytest.raises(NoOverlap):
            cohens_kappa(a, b)

    def test_task_mismatch(self):
        a = vec([1, 0])
        b = LabelVector("b", Task.MAPPING, [("m", "g0", 1), ("m", "g1", 0)])
        with pytest.raises(TaskMismatch):
            cohens_kappa(a, b)

    def test_duplicate_pairs_rejected(self):
        with pytest.raises(ValueError):
            LabelVector("a", Task.ROADMAP, [("m", "g", 1), ("m", "g", 0)])


def report_from_counts(task, counts):
    results = [
        GuidelineResult(key, 1 if c == n else 0, n, c)
        for key, (c, n) in zip(suite_for(task).keys, counts)
    ]
    return EvaluationReport(task, results, "", correctness_score(results))


class TestExtractJudgeLabels:
    def test_one_roadmap_report_gives_seven_labels(self):
        report = report_from_counts(Task.ROADMAP, [(2, 2)] * 7)
        vector = extract_judge_labels([report], "manual-1")
        assert len(vector.labels) == 7
        assert {k for _, k, _ in vector.labels} == set(suite_for(Task.ROADMAP).keys)
        assert all(v == 1 for _, _, v in vector.labels)

    def test_empty_reports_give_empty_vector(self):
        assert extract_judge_labels([], "manual-1").labels == []

    def test_fifty_manuals_give_350_labels(self):
        vectors = [
            extract_judge_labels(
                [report_from_counts(Task.ROADMAP, [(2, 2)] * 7)], f"manual-{i:02d}"
            )
            for i in range(50)
        ]
        merged = merge_label_vectors(vectors)
        assert len(merged.labels) == 350

    def test_failing_guideline_labels_zero(self):
        report = report_from_counts(Task.ROADMAP, [(2, 2)] * 3 + [(1, 2)] + [(2, 2)] * 3)
        vector = extract_judge_labels([report], "m")
        by_key = {k: v for _, k, v in vector.labels}
        assert by_key["note_extraction"] == 0


class TestLoadLabelsFromDir:
    def test_pipeline_layout_takes_highest_iteration(self, tmp_path):
        low = report_from_counts(Task.ROADMAP, [(1, 2)] + [(2, 2)] * 6)
        high = report_from_counts(Task.ROADMAP, [(2, 2)] * 7)
        save_report(low, tmp_path / "manual-a" / "roadmap" / "iter0.eval.json")
        save_report(high, tmp_path / "manual-a" / "roadmap" / "iter1.eval.json")
        save_report(low, tmp_path / "manual-b" / "roadmap" / "iter0.eval.json")
        # A different task's report is skipped.
        save_report(
            report_from_counts(Task.MAPPING, [(2, 2)] * 7),
            tmp_path / "manual-a" / "mapping" / "iter0.eval.json",
        )
        vector = load_labels_from_dir(tmp_path, Task.ROADMAP, "judge")
        assert len(vector.labels) == 14
        by_pair = vector.as_dict()
        assert by_pair[("manual-a", "step_splitting")] == 1  # iter1 won
        assert by_pair[("manual-b", "step_splitting")] == 0

    def test_flat_layout_uses_file_stem(self, tmp_path):
        save_report(
            report_from_counts(Task.ROADMAP, [(2, 2)] * 7),
            tmp_path / "manual-x.eval.json",
        )
        vector = load_labels_from_dir(tmp_path, Task.ROADMAP, "human")
        assert {m for m, _, _ in vector.labels} == {"manual-x"}


def make_outcome(scores: list[float]) -> LoopOutcome:
    history = [
        IterationRecord(
            k, k, None, report_from_counts(Task.ROADMAP, _counts_for(score))
        )
        for k, score in enumerate(scores)
    ]
    accepted = len(history) - 1
    return LoopOutcome(
        history=history,
        accepted_index=accepted,
        delta_corr=scores[accepted] - scores[0],
        reached_threshold=scores[accepted] >= 0.9,
    )


def _counts_for(score: float):
    total = round(score * 100)
    checked = [20, 20, 15, 15, 10, 10, 10]
    counts = []
    remaining = total
    for n in checked:
        c = min(n, remaining)
        counts.append((c, n))
        remaining -= c
    return counts


class TestSummarizeRuns:
    def test_table_rows_reproduce_published_deltas(self):
        outcomes = [make_outcome([0.88, 1.00]), make_outcome([0.89, 1.00])]
        report = summarize_runs(outcomes, labels=["15", "40"])
        assert abs(report.rows[0].delta - 0.12) < 1e-9
        assert abs(report.rows[1].delta - 0.11) < 1e-9
        assert report.rows[0].reached_threshold

    def test_single_outcome_without_iterations(self):
        report = summarize_runs([make_outcome([0.97])])
        row = report.rows[0]
        assert row.iteration_scores == []
        assert row.delta == 0.0

    def test_aggregate_mean(self):
        report = summarize_runs([make_outcome([1.0]), make_outcome([0.94])])
        assert abs(report.aggregates["accepted"]["mean"] - 0.97) < 1e-12
        assert report.aggregates["accepted"]["min"] == 0.94
        assert report.aggregates["accepted"]["max"] == 1.0

    def test_rendered_table_lists_each_row(self):
        report = summarize_runs([make_outcome([0.88, 1.00])], labels=["15"])
        text = render_run_table(report)
        assert "15" in text
        assert "0.88" in text
        assert "+0.12" in text
        assert "mean" in text
