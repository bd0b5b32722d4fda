"""Scoring predictions against gold labels.

Covers the 5x5 confusion matrix, per-class recall/precision/F1 (undefined
values stay None rather than collapsing to zero), McNemar's paired
significance test over discordant instances, the per-class module
contribution breakdown, and report rendering in a fixed five-column layout
(CST, INC, ADD, FGT, UFG).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping

from .corpus import EventType, RelevanceLabel, relevance_from_gold
from .errors import KeyMismatch

EVENT_ORDER = (
    EventType.CONSISTENT,
    EventType.INCONSISTENT,
    EventType.ADDITIONAL,
    EventType.FORGOTTEN,
    EventType.UNFORGOTTEN,
)

_INDEX = {event: i for i, event in enumerate(EVENT_ORDER)}


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed (gold, predicted) in EVENT_ORDER."""

    counts: tuple[tuple[int, ...], ...]

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def cell(self, gold: EventType, pred: EventType) -> int:
        return self.counts[_INDEX[gold]][_INDEX[pred]]

    def gold_count(self, event: EventType) -> int:
        return sum(self.counts[_INDEX[event]])

    def predicted_count(self, event: EventType) -> int:
        column = _INDEX[event]
        return sum(row[column] for row in self.counts)


def _check_aligned(*key_sets) -> None:
    first = set(key_sets[0])
    for other in key_sets[1:]:
        difference = first.symmetric_difference(other)
        if difference:
            sample = sorted(difference)[:3]
            raise KeyMismatch(
                f"{len(difference)} unmatched instance key(s), e.g. {sample}"
            )


def confusion(
    preds: Mapping[object, EventType], gold: Mapping[object, EventType]
) -> ConfusionMatrix:
    _check_aligned(preds.keys(), gold.keys())
    counts = [[0] * len(EVENT_ORDER) for _ in EVENT_ORDER]
    for key in preds:
        counts[_INDEX[gold[key]]][_INDEX[preds[key]]] += 1
    return ConfusionMatrix(counts=tuple(tuple(row) for row in counts))


@dataclass(frozen=True)
class ClassMetrics:
    recall: float | None
    precision: float | None
    f1: float | None
    support: int


def class_metrics(matrix: ConfusionMatrix) -> dict[EventType, ClassMetrics]:
    """recall = TP/(TP+FN), precision = TP/(TP+FP), f1 their harmonic mean;
    each is None when its denominator is zero."""
    out: dict[EventType, ClassMetrics] = {}
    for event in EVENT_ORDER:
        tp = matrix.cell(event, event)
        support = matrix.gold_count(event)
        predicted = matrix.predicted_count(event)
        recall = tp / support if support else None
        precision = tp / predicted if predicted else None
        if recall is None or precision is None or recall + precision == 0:
            f1 = None
        else:
            f1 = 2 * precision * recall / (precision + recall)
        out[event] = ClassMetrics(
            recall=recall, precision=precision, f1=f1, support=support
        )
    return out


def chi2_survival(statistic: float) -> float:
    """Survival function of the chi-square distribution with one degree of
    freedom, via the complementary error function of sqrt(statistic / 2)."""
    return math.erfc(math.sqrt(statistic / 2.0))


@dataclass(frozen=True)
class McNemarResult:
    b: int  # first predictor correct, second wrong
    c: int  # first predictor wrong, second correct
    statistic: float | None
    p_value: float | None

    @property
    def degenerate(self) -> bool:
        return self.b + self.c == 0


def mcnemar(
    preds_a: Mapping[object, EventType],
    preds_b: Mapping[object, EventType],
    gold: Mapping[object, EventType],
    continuity_correction: bool = False,
) -> McNemarResult:
    """(b - c)^2 / (b + c) over discordant pairs, with the p-value from the
    chi-square(1) survival function. With b + c = 0 the test is degenerate
    and statistic and p stay None. The corrected variant uses
    (|b - c| - 1)^2 in the numerator."""
    _check_aligned(preds_a.keys(), preds_b.keys(), gold.keys())
    b = c = 0
    for key in gold:
        correct_a = preds_a[key] == gold[key]
        correct_b = preds_b[key] == gold[key]
        if correct_a and not correct_b:
            b += 1
        elif correct_b and not correct_a:
            c += 1
    if b + c == 0:
        return McNemarResult(b=b, c=c, statistic=None, p_value=None)
    numerator = (abs(b - c) - 1) ** 2 if continuity_correction else (b - c) ** 2
    statistic = numerator / (b + c)
    return McNemarResult(b=b, c=c, statistic=statistic, p_value=chi2_survival(statistic))


@dataclass(frozen=True)
class ContributionRow:
    fail: float | None
    success: float | None
    alternative_insight: float | None
    count: int


@dataclass(frozen=True)
class ModulePrediction:
    """The slice of a pipeline prediction the contribution analysis needs."""

    key: tuple[str, str, str]
    base_label: RelevanceLabel
    support_label: RelevanceLabel


def contribution_analysis(
    predictions, gold: Mapping[object, EventType]
) -> dict[EventType, ContributionRow]:
    """Per gold event type: Fail counts instances where base and support
    modules are both wrong, Success where the support module agrees with a
    correct base module, and Alternative Insight where the two disagree.

    Correctness is judged against the gold event type collapsed to the
    binary working label."""
    gold_keys = set(gold.keys())
    counters = {event: [0, 0, 0] for event in EVENT_ORDER}  # fail, success, alt
    for pred in predictions:
        if pred.key not in gold_keys:
            raise KeyMismatch(f"prediction key {pred.key} not in gold")
        gold_type = gold[pred.key]
        gold_relevance = relevance_from_gold(gold_type)
        agree = pred.base_label == pred.support_label
        base_correct = pred.base_label == gold_relevance
        if not agree:
            counters[gold_type][2] += 1
        elif base_correct:
            counters[gold_type][1] += 1
        else:
            counters[gold_type][0] += 1
    out: dict[EventType, ContributionRow] = {}
    for event in EVENT_ORDER:
        fail, success, alt = counters[event]
        count = fail + success + alt
        if count:
            out[event] = ContributionRow(
                fail=fail / count,
                success=success / count,
                alternative_insight=alt / count,
                count=count,
            )
        else:
            out[event] = ContributionRow(
                fail=None, success=None, alternative_insight=None, count=0
            )
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

Report = dict[str, dict[EventType, ClassMetrics]]

_HEADER = "| Model | " + " | ".join(e.abbrev for e in EVENT_ORDER) + " |"
_RULE = "|" + "---|" * (len(EVENT_ORDER) + 1)


def _fmt(value: float | None) -> str:
    return f"{value:.4f}" if value is not None else "n/a"


def emit_report(metrics: Report, format: str = "markdown") -> str:
    """Render per-model metrics as two five-column tables (recall and F1),
    or as JSON carrying full precision."""
    if format == "json":
        doc = {
            "models": {
                name: {
                    event.value: {
                        "recall": m.recall,
                        "precision": m.precision,
                        "f1": m.f1,
                        "support": m.support,
                    }
                    for event, m in per_class.items()
                }
                for name, per_class in metrics.items()
            }
        }
        return json.dumps(doc, indent=2, sort_keys=True)
    if format not in ("markdown", "md"):
        raise ValueError(f"unknown report format: {format!r}")
    lines = ["## Recall", "", _HEADER, _RULE]
    for name, per_class in metrics.items():
        cells = " | ".join(_fmt(per_class[e].recall) for e in EVENT_ORDER)
        lines.append(f"| {name} | {cells} |")
    lines += ["", "## F1", "", _HEADER, _RULE]
    for name, per_class in metrics.items():
        cells = " | ".join(_fmt(per_class[e].f1) for e in EVENT_ORDER)
        lines.append(f"| {name} | {cells} |")
    return "\n".join(lines)


def report_from_json(text: str) -> Report:
    doc = json.loads(text)
    out: Report = {}
    for name, per_class in doc["models"].items():
        out[name] = {
            EventType(event): ClassMetrics(
                recall=values["recall"],
                precision=values["precision"],
                f1=values["f1"],
                support=values["support"],
            )
            for event, values in per_class.items()
        }
    return out
