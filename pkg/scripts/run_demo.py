#!/usr/bin/env python3
"""Offline end-to-end demo: run the pipeline over the bundled fixture corpus
with scripted providers, then print the per-class recall and F1 tables and
the module contribution breakdown."""

from pathlib import Path

from ger.config import build_ger_config, parse_flat_config
from ger.corpus import load_corpus
from ger.evaluation import (
    EVENT_ORDER,
    class_metrics,
    confusion,
    contribution_analysis,
    emit_report,
)
from ger.pipeline import run_pipeline

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def main() -> None:
    pairs = load_corpus(FIXTURES / "demo_corpus.json")
    cfg = build_ger_config(parse_flat_config(FIXTURES / "demo.cfg"), FIXTURES)
    run = run_pipeline(cfg, pairs)
    print(f"instances: {run.total}, predicted: {len(run.predictions)}, "
          f"failed: {len(run.failures)}")

    gold = {p.key: p.gold_label for p in run.predictions if p.gold_label}
    preds = {p.key: p.final_event_type for p in run.predictions if p.key in gold}
    metrics = class_metrics(confusion(preds, gold))
    print()
    print(emit_report({"demo (gold-scripted)": metrics}, "markdown"))

    contribution = contribution_analysis(run.predictions, gold)
    print("\n## Module contribution\n")
    print("| Event | Fail | Success | Alternative Insight | Count |")
    print("|---|---|---|---|---|")
    for event in EVENT_ORDER:
        row = contribution[event]
        cells = [
            f"{v * 100:.2f}%" if v is not None else "n/a"
            for v in (row.fail, row.success, row.alternative_insight)
        ]
        print(f"| {event.abbrev} | {cells[0]} | {cells[1]} | {cells[2]} | {row.count} |")


if __name__ == "__main__":
    main()
