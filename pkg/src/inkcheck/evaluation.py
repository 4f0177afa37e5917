"""Assessment scenarios, the two-step baseline, PR curves and calibration."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .textgen import DatasetManifest, build_dataset, sample_words

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    mistakes: int
    correct: int
    min_recall: float = 0.99
    severity: int = 1

    def __post_init__(self):
        if self.mistakes < 1 or self.correct < 1:
            raise ValueError("mistake-to-correct ratio needs positive parts")
        if not 1 <= self.severity <= 3:
            raise ValueError(f"severity {self.severity} outside 1..3")

    @property
    def mean_mistakes(self) -> float:
        return self.mistakes / (self.mistakes + self.correct)


SCENARIOS = {
    "moderate": ScenarioSpec("moderate", 1, 5),
    "difficult": ScenarioSpec("difficult", 1, 2),
}
SEVERITIES = (1, 2, 3)


def scenario(name: str, severity: int = 1, min_recall: float = 0.99) -> ScenarioSpec:
    base = SCENARIOS[name]
    return ScenarioSpec(base.name, base.mistakes, base.correct, min_recall, severity)


def _half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def scenario_counts(spec: ScenarioSpec, total: int) -> tuple[int, int]:
    """(misspelled, correct) counts; misspelled share rounded half-up."""
    if total <= 0:
        raise ValueError("test set size must be positive")
    n_wrong = _half_up(spec.mistakes * total / (spec.mistakes + spec.correct))
    return n_wrong, total - n_wrong


def build_test_set(spec: ScenarioSpec, total: int, wordlist: Sequence[str], renderer, seed: int,
                   cache: dict | None = None) -> DatasetManifest:
    """``total`` sampled words, the first M misspelled at ``spec.severity``.

    Every scenario/severity built from the same ``seed`` shares its source
    words and per-index styles; only the noise differs.
    """
    n_wrong, _ = scenario_counts(spec, total)
    words = sample_words(wordlist, total, np.random.default_rng([seed, 0]))
    return build_dataset(words, n_wrong / total, spec.severity, renderer, seed, n_incorrect=n_wrong, cache=cache)


# ---------------------------------------------------------------------------
# baseline


def baseline_classify(prediction: str, text: str) -> bool:
    """Two-step rule: a mistake is reported iff the recognized word differs from ``text``."""
    return prediction != text


def baseline_precision(m: int, c: int, correct_predictions: int, total: int) -> float:
    """Upper-bound precision of the two-step baseline when ``correct_predictions`` of ``total`` words are read right.

    Every misspelled word is assumed flagged (TP = M) and correct words are
    misread at the recognizer's overall error rate, FP = C * (T - P) / T.
    TP and FP are counted in whole examples, so FP is rounded half-up; the
    unrounded ratio ``m / (m + c * (T - P) / T)`` can differ in the fourth
    decimal (0.56694 instead of 0.56696 for m:c = 1:2, P = 9271, T = 15000).
    """
    if not 0 <= correct_predictions <= total or total <= 0:
        raise ValueError("correct predictions must lie in [0, total] with total > 0")
    if m < 1 or c < 1:
        raise ValueError("mistake-to-correct ratio needs positive parts")
    n_wrong = _half_up(m * total / (m + c))
    n_right = total - n_wrong
    false_pos = _half_up(n_right * (total - correct_predictions) / total)
    return n_wrong / (n_wrong + false_pos)


def expected_undetected(mean_mistakes: float, recall: float, n_words: int) -> float:
    return n_words * mean_mistakes * (1.0 - recall)


# ---------------------------------------------------------------------------
# PR curve and calibration


def pr_curve(scores: Sequence[float], labels: Sequence[int]) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) at every distinct score, ascending in threshold.

    A sample is predicted positive when ``score >= threshold``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    positives = int(labels.sum())
    if positives == 0:
        raise ValueError("PR curve needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    last_of_group = np.append(s[1:] != s[:-1], True)
    points = [
        (float(s[i]), tp[i] / (tp[i] + fp[i]), tp[i] / positives)
        for i in np.nonzero(last_of_group)[0]
    ]
    return points[::-1]


def calibrate(curve: Sequence[tuple[float, float, float]], min_recall: float) -> float:
    """Threshold of highest precision among points with recall >= ``min_recall``.

    Ties go to the larger threshold. When no point meets the constraint the
    smallest threshold is returned and a warning logged.
    """
    if not curve:
        raise ValueError("empty PR curve")
    feasible = [p for p in curve if p[2] >= min_recall]
    if not feasible:
        log.warning("no threshold reaches recall %.3f; using the smallest", min_recall)
        return min(p[0] for p in curve)
    return max(feasible, key=lambda p: (p[1], p[0]))[0]


def confusion(scores: Sequence[float], labels: Sequence[int], threshold: float) -> dict[str, int]:
    pred = np.asarray(scores) >= threshold
    y = np.asarray(labels) == 1
    return {"tp": int(np.sum(pred & y)), "fp": int(np.sum(pred & ~y)),
            "tn": int(np.sum(~pred & ~y)), "fn": int(np.sum(~pred & y))}


def _precision(c: dict) -> float:
    return c["tp"] / (c["tp"] + c["fp"]) if c["tp"] + c["fp"] else 1.0


def _recall(c: dict) -> float:
    return c["tp"] / (c["tp"] + c["fn"]) if c["tp"] + c["fn"] else 0.0


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    scenario: str
    severity: int
    min_recall: float
    threshold: float
    counts: dict
    precision: float
    recall: float
    baseline_counts: dict
    baseline_measured_precision: float
    baseline_recall: float
    recognized_correctly: int
    total: int
    baseline_precision: float
    improvement: float
    pr_curve: list = field(repr=False, default_factory=list)

    def row(self) -> dict:
        return {
            "scenario": self.scenario, "severity": self.severity,
            "TP": self.counts["tp"], "FP": self.counts["fp"], "TN": self.counts["tn"], "FN": self.counts["fn"],
            "precision": round(self.precision, 6), "recall": round(self.recall, 6),
            "baseline_precision": round(self.baseline_precision, 6),
            "improvement": round(self.improvement, 6),
        }


def evaluate_scores(spec: ScenarioSpec, scores: Sequence[float], labels: Sequence[int],
                    predictions: Sequence[str], texts: Sequence[str], rendered: Sequence[str],
                    threshold: float | None = None) -> EvalReport:
    """Score one test set: calibrated classifier vs. the two-step baseline.

    ``baseline_precision`` follows the closed form with the number of test
    words the recognizer read correctly; the baseline's confusion counts on
    the same examples are reported alongside.
    """
    if len(scores) == 0:
        raise ValueError("empty test set")
    curve = pr_curve(scores, labels)
    if threshold is None:
        threshold = calibrate(curve, spec.min_recall)
    counts = confusion(scores, labels, threshold)
    flags = [baseline_classify(p, t) for p, t in zip(predictions, texts)]
    base = confusion(np.asarray(flags, dtype=float), labels, 0.5)
    correct = sum(p == r for p, r in zip(predictions, rendered))
    closed_form = baseline_precision(spec.mistakes, spec.correct, correct, len(scores))
    precision = _precision(counts)
    return EvalReport(
        scenario=spec.name, severity=spec.severity, min_recall=spec.min_recall, threshold=float(threshold),
        counts=counts, precision=precision, recall=_recall(counts),
        baseline_counts=base, baseline_measured_precision=_precision(base), baseline_recall=_recall(base),
        recognized_correctly=correct, total=len(scores),
        baseline_precision=closed_form, improvement=(precision - closed_form) / closed_form,
        pr_curve=[list(p) for p in curve],
    )


def summarize(reports: Sequence[EvalReport]) -> dict[str, dict]:
    """Per-scenario arithmetic means over severity levels."""
    out = {}
    for name in sorted({r.scenario for r in reports}):
        group = sorted((r for r in reports if r.scenario == name), key=lambda r: r.severity)
        ours = float(np.mean([r.precision for r in group]))
        closed = float(np.mean([r.baseline_precision for r in group]))
        measured = float(np.mean([r.baseline_measured_precision for r in group]))
        out[name] = {
            "precision": ours,
            "recall": float(np.mean([r.recall for r in group])),
            "baseline_precision": closed,
            "baseline_measured_precision": measured,
            "baseline_recall": float(np.mean([r.baseline_recall for r in group])),
            "improvement": (ours - closed) / closed,
            "per_severity": {r.severity: r.precision for r in group},
        }
    return out


def improvement(ours: float, baseline: float) -> float:
    return (ours - baseline) / baseline


CSV_FIELDS = ["scenario", "severity", "TP", "FP", "TN", "FN", "precision", "recall",
              "baseline_precision", "improvement"]


def write_reports(reports: Sequence[EvalReport], directory: str | Path, plots: bool = True) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {"reports": [asdict(r) for r in reports], "summary": summarize(reports)}
    paths = {"json": directory / "report.json", "csv": directory / "report.csv"}
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with paths["csv"].open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in reports:
            writer.writerow(r.row())
    if plots:
        for r in reports:
            path = directory / f"pr_{r.scenario}_severity{r.severity}.svg"
            path.write_text(pr_svg(r.pr_curve, f"{r.scenario}, severity {r.severity}"), encoding="utf-8")
            paths[path.stem] = path
    return paths


def pr_svg(curve: Sequence[Sequence[float]], title: str = "", size: int = 360) -> str:
    """Recall on x, precision on y, both over [0, 1]."""
    margin = 48
    span = size - 2 * margin

    def xy(recall, precision):
        return margin + recall * span, size - margin - precision * span

    pts = sorted((p[2], p[1]) for p in curve)
    path = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(r, p) for r, p in pts))
    ticks = []
    for v in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, _ = xy(v, 0)
        _, y = xy(0, v)
        ticks.append(f'<text x="{x:.1f}" y="{size - margin + 16}" font-size="10" text-anchor="middle">{v:g}</text>')
        ticks.append(f'<text x="{margin - 6}" y="{y + 3:.1f}" font-size="10" text-anchor="end">{v:g}</text>')
    x0, y0 = xy(0, 0)
    x1, y1 = xy(1, 1)
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{x0}" y="{y1}" width="{span}" height="{span}" fill="none" stroke="#444"/>',
        *ticks,
        f'<text x="{size / 2}" y="{size - 10}" font-size="12" text-anchor="middle">recall</text>',
        f'<text x="14" y="{size / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {size / 2})">precision</text>',
        f'<text x="{size / 2}" y="20" font-size="13" text-anchor="middle">{title}</text>',
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{path}"/>',
        "</svg>",
        "",
    ])
