"""Judge-vs-human agreement and run summaries.

Agreement is binary Cohen's kappa over (manual, guideline) labels aligned on
the intersection of two raters' vectors. Run summaries collapse refinement
loop outcomes into per-row scores with aggregate statistics, mirroring how
results tables report the original score, per-iteration scores and the
improvement delta.
"""

from __future__ import annotations

import logging
import re
import statistics
from dataclasses import dataclass
from pathlib import Path

from .errors import NoOverlap, TaskMismatch
from .extraction.types import Task
from .judging import EvaluationReport, load_report
from .refinement import LoopOutcome

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelVector:
    """One rater's binary guideline verdicts across manuals for one task."""

    rater_id: str
    task: Task
    labels: list[tuple[str, str, int]]  # (manual_id, guideline_key, 0 or 1)

    def __post_init__(self):
        pairs = [(m, k) for m, k, _ in self.labels]
        if len(pairs) != len(set(pairs)):
            raise ValueError("duplicate (manual_id, guideline_key) pairs")
        if any(v not in (0, 1) for _, _, v in self.labels):
            raise ValueError("labels must be 0 or 1")

    def as_dict(self) -> dict[tuple[str, str], int]:
        return {(m, k): v for m, k, v in self.labels}


@dataclass(frozen=True)
class AgreementResult:
    kappa: float
    p_o: float
    p_e: float
    n: int
    degenerate: bool = False
    dropped: int = 0


def cohens_kappa(a: LabelVector, b: LabelVector) -> AgreementResult:
    """Chance-corrected agreement between two binary label vectors.

    Labels align on the intersection of (manual_id, guideline_key) pairs;
    labels present in only one vector are dropped and counted. When chance
    agreement is 1 the statistic is undefined; that degenerate case reports
    kappa 1.0 for perfect agreement and 0.0 otherwise.
    """
    if a.task is not b.task:
        raise TaskMismatch(f"{a.task.value} vs {b.task.value}")
    da, db = a.as_dict(), b.as_dict()
    keys = sorted(set(da) & set(db))
    dropped = len(set(da) ^ set(db))
    if not keys:
        raise NoOverlap("label vectors share no (manual, guideline) pairs")
    if dropped:
        logger.warning("kappa alignment dropped %d unshared labels", dropped)

    n = len(keys)
    va = [da[k] for k in keys]
    vb = [db[k] for k in keys]
    p_o = sum(1 for x, y in zip(va, vb) if x == y) / n
    pa1 = sum(va) / n
    pb1 = sum(vb) / n
    p_e = pa1 * pb1 + (1 - pa1) * (1 - pb1)
    if p_e >= 1.0 - 1e-15:
        return AgreementResult(
            kappa=1.0 if p_o == 1.0 else 0.0,
            p_o=p_o,
            p_e=1.0,
            n=n,
            degenerate=True,
            dropped=dropped,
        )
    kappa = (p_o - p_e) / (1 - p_e)
    return AgreementResult(kappa=kappa, p_o=p_o, p_e=p_e, n=n, dropped=dropped)


def extract_judge_labels(
    reports: list[EvaluationReport], manual_id: str, rater_id: str = "judge"
) -> LabelVector:
    """One label per guideline result; all reports must share one task."""
    if not reports:
        return LabelVector(rater_id=rater_id, task=Task.ROADMAP, labels=[])
    tasks = {r.task for r in reports}
    if len(tasks) > 1:
        raise TaskMismatch(f"reports span multiple tasks: {sorted(t.value for t in tasks)}")
    labels = [
        (manual_id, result.key, result.score)
        for report in reports
        for result in report.results
    ]
    return LabelVector(rater_id=rater_id, task=reports[0].task, labels=labels)


def merge_label_vectors(vectors: list[LabelVector]) -> LabelVector:
    """Concatenate per-manual vectors from one rater into a single vector."""
    if not vectors:
        raise ValueError("no vectors to merge")
    tasks = {v.task for v in vectors}
    if len(tasks) > 1:
        raise TaskMismatch(f"vectors span multiple tasks: {sorted(t.value for t in tasks)}")
    labels = [label for v in vectors for label in v.labels]
    return LabelVector(rater_id=vectors[0].rater_id, task=vectors[0].task, labels=labels)


_ITER_RE = re.compile(r"iter(\d+)\.eval\.json$")


def load_labels_from_dir(root: str | Path, task: Task, rater_id: str) -> LabelVector:
    """Collect labels from evaluation-report files under a rater directory.

    Accepts the pipeline output layout ``<manual_id>/<task>/iter<k>.eval.json``
    (highest iteration wins) and flat ``<name>.eval.json`` files (the filename
    stem names the manual). Reports for other tasks are skipped.
    """
    root = Path(root)
    chosen: dict[str, tuple[int, EvaluationReport]] = {}
    for path in sorted(root.rglob("*.eval.json")):
        report = load_report(path)
        if report.task is not task:
            continue
        relative = path.relative_to(root)
        manual_id = relative.parts[0] if len(relative.parts) > 1 else path.name.split(".")[0]
        m = _ITER_RE.search(path.name)
        iteration = int(m.group(1)) if m else 0
        current = chosen.get(manual_id)
        if current is None or iteration >= current[0]:
            chosen[manual_id] = (iteration, report)
    vectors = [
        extract_judge_labels([report], manual_id, rater_id)
        for manual_id, (_, report) in sorted(chosen.items())
    ]
    if not vectors:
        return LabelVector(rater_id=rater_id, task=task, labels=[])
    return merge_label_vectors(vectors)


# -- run summaries -------------------------------------------------------------

@dataclass(frozen=True)
class RunRow:
    label: str
    original: float
    iteration_scores: list[float]
    accepted: float
    delta: float
    reached_threshold: bool


@dataclass(frozen=True)
class RunReport:
    rows: list[RunRow]
    aggregates: dict[str, dict[str, float]]


def _aggregate(values: list[float]) -> dict[str, float]:
    return {
        "mean": statistics.fmean(values),
        "median": statistics.median(values),
        "min": min(values),
        "max": max(values),
    }


def summarize_runs(outcomes: list[LoopOutcome], labels: list[str] | None = None) -> RunReport:
    """Per-run rows plus aggregate statistics over a batch of loop outcomes."""
    if labels is None:
        labels = [str(i + 1) for i in range(len(outcomes))]
    if len(labels) != len(outcomes):
        raise ValueError("labels must match outcomes one to one")
    rows = []
    for label, outcome in zip(labels, outcomes):
        scores = [r.report.correctness for r in outcome.history]
        rows.append(
            RunRow(
                label=label,
                original=scores[0],
                iteration_scores=scores[1:],
                accepted=outcome.accepted.report.correctness,
                delta=outcome.delta_corr,
                reached_threshold=outcome.reached_threshold,
            )
        )
    aggregates = {
        "original": _aggregate([r.original for r in rows]) if rows else {},
        "accepted": _aggregate([r.accepted for r in rows]) if rows else {},
        "delta": _aggregate([r.delta for r in rows]) if rows else {},
    }
    return RunReport(rows=rows, aggregates=aggregates)


def run_report_to_dict(report: RunReport) -> dict:
    return {
        "rows": [
            {
                "label": r.label,
                "original": r.original,
                "iterations": list(r.iteration_scores),
                "accepted": r.accepted,
                "delta": r.delta,
                "reached_threshold": r.reached_threshold,
            }
            for r in report.rows
        ],
        "aggregates": report.aggregates,
    }


def render_run_table(report: RunReport, max_iterations: int = 3) -> str:
    """Aligned plain-text table of per-run scores and deltas."""
    header = ["No", "Original"] + [f"iter {i + 1}" for i in range(max_iterations)] + [
        "Delta",
        "Reached",
    ]
    rows = [header]
    for r in report.rows:
        iters = [f"{s:.2f}" for s in r.iteration_scores]
        iters += [""] * (max_iterations - len(iters))
        rows.append(
            [r.label, f"{r.original:.2f}", *iters, f"{r.delta:+.2f}", "yes" if r.reached_threshold else "no"]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    if report.rows:
        agg = report.aggregates
        lines.append("")
        for name in ("original", "accepted", "delta"):
            a = agg[name]
            lines.append(
                f"{name}: mean {a['mean']:.4f}  median {a['median']:.4f}  "
                f"min {a['min']:.4f}  max {a['max']:.4f}"
            )
    return "\n".join(lines)


def agreement_to_dict(result: AgreementResult) -> dict:
    return {
        "kappa": result.kappa,
        "p_o": result.p_o,
        "p_e": result.p_e,
        "n": result.n,
        "degenerate": result.degenerate,
        "dropped": result.dropped,
    }
