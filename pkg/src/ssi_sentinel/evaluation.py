"""Confusion matrices, surveillance metrics, temporal splits and reports."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import Procedure
from .models import Prediction
from .termselect import TermStats

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricSet:
    """Raw fractions in [0, 1]; None where the denominator is zero."""

    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    accuracy: float | None


def confusion(flags: Sequence[bool], gold: Sequence[bool | None]) -> ConfusionMatrix:
    """Cross-tabulate flags against gold labels (all labels required)."""
    if len(flags) != len(gold):
        raise EvaluationError("flag and label vectors differ in length")
    tp = fp = fn = tn = 0
    for i, (flagged, label) in enumerate(zip(flags, gold)):
        if label is None:
            raise EvaluationError(f"evaluation requires gold labels (row {i} unlabeled)")
        if flagged and label:
            tp += 1
        elif flagged:
            fp += 1
        elif label:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def metrics(cm: ConfusionMatrix) -> MetricSet:
    return MetricSet(
        sensitivity=_ratio(cm.tp, cm.tp + cm.fn),
        specificity=_ratio(cm.tn, cm.tn + cm.fp),
        ppv=_ratio(cm.tp, cm.tp + cm.fp),
        accuracy=_ratio(cm.tp + cm.tn, cm.total),
    )


def pct(value: float | None) -> float | None:
    """Percentage at 2 decimals, half-up, matching the reporting convention."""
    if value is None:
        return None
    return float(Decimal(repr(value * 100)).quantize(Decimal("0.01"), ROUND_HALF_UP))


def temporal_split(
    procedures: Sequence[Procedure],
    train_years: set[int],
    test_years: set[int],
) -> tuple[list[Procedure], list[Procedure]]:
    """Partition procedures by intervention year."""
    overlap = train_years & test_years
    if overlap:
        raise EvaluationError(f"train/test years overlap: {sorted(overlap)}")
    train = [p for p in procedures if p.year in train_years]
    test = [p for p in procedures if p.year in test_years]
    excluded = len(procedures) - len(train) - len(test)
    if excluded:
        log.info("temporal split excluded %d procedures outside both year sets", excluded)
    if not test:
        log.warning("temporal split produced an empty test set")
    return train, test


def build_report(
    cm: ConfusionMatrix,
    *,
    terms: Sequence[TermStats] | None = None,
    predictions: Sequence[Prediction] | None = None,
    gold: Mapping[str, bool] | None = None,
    split: dict | None = None,
) -> dict:
    """Machine-readable run report; the markdown rendering reads this dict.

    When predictions and gold labels are supplied the report carries a
    false-positive drill-down list for reviewer triage.
    """
    m = metrics(cm)
    report = {
        "confusion": {
            "tp": cm.tp,
            "fp": cm.fp,
            "fn": cm.fn,
            "tn": cm.tn,
            "total": cm.total,
        },
        "metrics": {
            "sensitivity_pct": pct(m.sensitivity),
            "specificity_pct": pct(m.specificity),
            "ppv_pct": pct(m.ppv),
            "accuracy_pct": pct(m.accuracy),
        },
    }
    if split is not None:
        report["split"] = split
    if terms is not None:
        report["terms"] = [
            {
                "term": s.term,
                "odds_ratio": None if s.odds_ratio != s.odds_ratio else s.odds_ratio,
                "a": s.a,
                "b": s.b,
            }
            for s in terms
        ]
    if predictions is not None and gold is not None:
        report["false_positives"] = [
            {"procedure_id": p.procedure_id, "probability": p.probability}
            for p in sorted(predictions, key=lambda p: (-p.probability, p.procedure_id))
            if p.flagged and gold.get(p.procedure_id) is False
        ]
    return report


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.2f} %"


def render_markdown(report: dict) -> str:
    """Human-readable table in the published 2x2 layout (M: SSI, T: flag)."""
    c = report["confusion"]
    m = report["metrics"]
    lines = [
        "# Surveillance run report",
        "",
        "| | M+ | M- | total |",
        "|---|---|---|---|",
        f"| T+ | {c['tp']} | {c['fp']} | {c['tp'] + c['fp']} |",
        f"| T- | {c['fn']} | {c['tn']} | {c['fn'] + c['tn']} |",
        f"| total | {c['tp'] + c['fn']} | {c['fp'] + c['tn']} | {c['total']} |",
        "",
        f"- sensitivity: {_fmt(m['sensitivity_pct'])}",
        f"- specificity: {_fmt(m['specificity_pct'])}",
        f"- PPV: {_fmt(m['ppv_pct'])}",
        f"- accuracy: {_fmt(m['accuracy_pct'])}",
    ]
    if "split" in report:
        lines += ["", f"Split: {json.dumps(report['split'], sort_keys=True)}"]
    if "terms" in report:
        lines += ["", "## Selected terms", "", "| term | odds ratio | a | b |", "|---|---|---|---|"]
        for row in report["terms"]:
            ratio = "n/a" if row["odds_ratio"] is None else f"{row['odds_ratio']:.2f}"
            lines.append(f"| {row['term']} | {ratio} | {row['a']} | {row['b']} |")
    if "false_positives" in report:
        lines += ["", "## False positives for review", ""]
        if report["false_positives"]:
            for row in report["false_positives"]:
                lines.append(f"- {row['procedure_id']} (p={row['probability']:.4f})")
        else:
            lines.append("(none)")
    return "\n".join(lines) + "\n"


def write_report(report: dict, json_path: str | Path, md_path: str | Path) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write(render_markdown(report))
