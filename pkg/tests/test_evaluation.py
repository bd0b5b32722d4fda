import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from ger.corpus import EventType, RelevanceLabel
from ger.errors import KeyMismatch
from ger.evaluation import (
    EVENT_ORDER,
    ModulePrediction,
    chi2_survival,
    class_metrics,
    confusion,
    contribution_analysis,
    emit_report,
    mcnemar,
    report_from_json,
)

import helpers

CST = EventType.CONSISTENT
INC = EventType.INCONSISTENT
ADD = EventType.ADDITIONAL
FGT = EventType.FORGOTTEN
UFG = EventType.UNFORGOTTEN


def test_confusion_diagonal():
    gold = {i: event for i, event in enumerate(EVENT_ORDER)}
    matrix = confusion(gold, gold)
    assert matrix.total == 5
    for event in EVENT_ORDER:
        assert matrix.cell(event, event) == 1


def test_confusion_hand_example():
    gold = {0: FGT, 1: FGT, 2: UFG}
    pred = {0: FGT, 1: UFG, 2: UFG}
    matrix = confusion(pred, gold)
    assert matrix.cell(FGT, FGT) == 1
    assert matrix.cell(FGT, UFG) == 1
    assert matrix.cell(UFG, UFG) == 1
    assert matrix.total == 3


def test_confusion_rejects_unaligned_keys():
    with pytest.raises(KeyMismatch):
        confusion({0: FGT}, {1: FGT})


def test_class_metrics_hand_example():
    gold = {0: FGT, 1: FGT, 2: UFG}
    pred = {0: FGT, 1: UFG, 2: UFG}
    metrics = class_metrics(confusion(pred, gold))
    assert metrics[FGT].recall == pytest.approx(0.5)
    assert metrics[UFG].recall == pytest.approx(1.0)
    assert metrics[UFG].precision == pytest.approx(0.5)
    assert metrics[UFG].f1 == pytest.approx(2 / 3)
    assert metrics[FGT].support == 2


def test_class_metrics_diagonal_is_perfect():
    gold = {i: event for i, event in enumerate(EVENT_ORDER)}
    metrics = class_metrics(confusion(gold, gold))
    for event in EVENT_ORDER:
        assert metrics[event].recall == 1.0
        assert metrics[event].f1 == 1.0


def test_class_metrics_zero_support_is_none():
    gold = {0: FGT}
    pred = {0: FGT}
    metrics = class_metrics(confusion(pred, gold))
    assert metrics[INC].recall is None
    assert metrics[INC].precision is None
    assert metrics[INC].f1 is None
    assert metrics[INC].support == 0


def seeded_random_sets(count=100, max_total=20, seed=90210):
    rng = random.Random(seed)
    for _ in range(count):
        n = rng.randint(1, max_total)
        gold = {i: rng.choice(EVENT_ORDER) for i in range(n)}
        pred = {i: rng.choice(EVENT_ORDER) for i in range(n)}
        yield gold, pred


def test_class_metrics_match_brute_force_recount():
    for gold, pred in seeded_random_sets():
        metrics = class_metrics(confusion(pred, gold))
        recount = helpers.recount_metrics(gold, pred)
        for event in EVENT_ORDER:
            expected_recall, expected_precision, expected_f1, support = recount[event]
            assert metrics[event].recall == expected_recall
            assert metrics[event].precision == expected_precision
            assert metrics[event].f1 == expected_f1
            assert metrics[event].support == support


# ---------------------------------------------------------------------------
# McNemar
# ---------------------------------------------------------------------------


def preds_with_discordance(b, c, concordant=3):
    """Gold and two prediction maps with exactly b (A right, B wrong) and
    c (A wrong, B right) discordant instances."""
    gold, preds_a, preds_b = {}, {}, {}
    key = 0
    for _ in range(b):
        gold[key], preds_a[key], preds_b[key] = FGT, FGT, UFG
        key += 1
    for _ in range(c):
        gold[key], preds_a[key], preds_b[key] = FGT, UFG, FGT
        key += 1
    for _ in range(concordant):
        gold[key], preds_a[key], preds_b[key] = ADD, ADD, ADD
        key += 1
    return preds_a, preds_b, gold


def test_mcnemar_symmetric_discordance_gives_p_one():
    preds_a, preds_b, gold = preds_with_discordance(4, 4)
    result = mcnemar(preds_a, preds_b, gold)
    assert result.b == 4 and result.c == 4
    assert result.statistic == 0.0
    assert result.p_value == pytest.approx(1.0)


def test_mcnemar_frozen_example():
    preds_a, preds_b, gold = preds_with_discordance(10, 2)
    result = mcnemar(preds_a, preds_b, gold)
    assert result.statistic == pytest.approx(5.3333, abs=1e-4)
    assert result.p_value == pytest.approx(0.02092, abs=1e-4)
    # quadrature oracle for the survival function
    assert result.p_value == pytest.approx(
        helpers.chi2_survival_quad(result.statistic), abs=1e-9
    )


def test_mcnemar_degenerate():
    preds_a, preds_b, gold = preds_with_discordance(0, 0)
    result = mcnemar(preds_a, preds_b, gold)
    assert result.degenerate
    assert result.statistic is None and result.p_value is None


def test_mcnemar_continuity_correction_variant():
    preds_a, preds_b, gold = preds_with_discordance(10, 2)
    corrected = mcnemar(preds_a, preds_b, gold, continuity_correction=True)
    assert corrected.statistic == pytest.approx(49 / 12)
    assert corrected.p_value == pytest.approx(chi2_survival(49 / 12))


def test_mcnemar_rejects_unaligned():
    preds_a, preds_b, gold = preds_with_discordance(1, 1)
    del preds_b[0]
    with pytest.raises(KeyMismatch):
        mcnemar(preds_a, preds_b, gold)


@given(b=st.integers(0, 12), c=st.integers(0, 12))
def test_mcnemar_swap_symmetry(b, c):
    preds_a, preds_b, gold = preds_with_discordance(b, c)
    forward = mcnemar(preds_a, preds_b, gold)
    backward = mcnemar(preds_b, preds_a, gold)
    assert (forward.b, forward.c) == (backward.c, backward.b)
    assert forward.statistic == backward.statistic
    assert forward.p_value == backward.p_value


def test_p_value_monotone_in_discordance_gap():
    total = 12
    p_values = []
    for b in range(total // 2, total + 1):
        preds_a, preds_b, gold = preds_with_discordance(b, total - b)
        p_values.append(mcnemar(preds_a, preds_b, gold).p_value)
    assert p_values == sorted(p_values, reverse=True)


@settings(max_examples=50)
@given(statistic=st.floats(min_value=1e-6, max_value=40))
def test_chi2_survival_matches_quadrature(statistic):
    assert chi2_survival(statistic) == pytest.approx(
        helpers.chi2_survival_quad(statistic), abs=1e-9
    )


# ---------------------------------------------------------------------------
# Contribution analysis
# ---------------------------------------------------------------------------

REL, IRR = RelevanceLabel.RELEVANT, RelevanceLabel.IRRELEVANT


def module_pred(key, base, support):
    return ModulePrediction(key=key, base_label=base, support_label=support)


def test_contribution_categories():
    # gold UFG collapses to Relevant
    gold = {("p", "a", "d"): UFG, ("p", "b", "d"): UFG, ("p", "c", "d"): UFG}
    predictions = [
        module_pred(("p", "a", "d"), IRR, IRR),  # both wrong -> fail
        module_pred(("p", "b", "d"), REL, REL),  # agree and right -> success
        module_pred(("p", "c", "d"), REL, IRR),  # disagree -> alternative insight
    ]
    report = contribution_analysis(predictions, gold)
    row = report[UFG]
    assert row.count == 3
    assert row.fail == pytest.approx(1 / 3)
    assert row.success == pytest.approx(1 / 3)
    assert row.alternative_insight == pytest.approx(1 / 3)


def test_contribution_ratios_sum_to_one():
    rng = random.Random(4)
    gold, predictions = {}, []
    for i in range(100):
        key = ("p", str(i), "d")
        gold[key] = rng.choice(EVENT_ORDER)
        predictions.append(
            module_pred(key, rng.choice([REL, IRR]), rng.choice([REL, IRR]))
        )
    report = contribution_analysis(predictions, gold)
    for event in EVENT_ORDER:
        row = report[event]
        if row.count:
            assert row.fail + row.success + row.alternative_insight == pytest.approx(
                1.0, abs=1e-9
            )


def test_contribution_zero_count_class():
    gold = {("p", "a", "d"): UFG}
    report = contribution_analysis([module_pred(("p", "a", "d"), REL, REL)], gold)
    assert report[INC].count == 0
    assert report[INC].fail is None


def test_contribution_rejects_unknown_key():
    with pytest.raises(KeyMismatch):
        contribution_analysis([module_pred(("x", "y", "z"), REL, REL)], {})


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def sample_metrics():
    gold = {0: FGT, 1: FGT, 2: UFG}
    pred = {0: FGT, 1: UFG, 2: UFG}
    return {"model-a": class_metrics(confusion(pred, gold))}


def test_markdown_report_layout():
    text = emit_report(sample_metrics(), "markdown")
    lines = text.splitlines()
    assert "| Model | CST | INC | ADD | FGT | UFG |" in lines
    row = next(line for line in lines if line.startswith("| model-a"))
    assert "0.5000" in row
    assert "n/a" in row  # zero-support classes render as n/a
    assert text.count("| Model |") == 2  # one recall table, one f1 table


def test_markdown_report_empty_is_header_only():
    text = emit_report({}, "markdown")
    assert "| Model | CST | INC | ADD | FGT | UFG |" in text
    assert "model" not in text.replace("| Model |", "")


def test_json_report_roundtrip():
    metrics = sample_metrics()
    assert report_from_json(emit_report(metrics, "json")) == metrics


def test_report_rejects_unknown_format():
    with pytest.raises(ValueError):
        emit_report({}, "yaml")
