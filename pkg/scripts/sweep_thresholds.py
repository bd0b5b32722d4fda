#!/usr/bin/env python3
"""Sweep the retrieval node threshold over the demo corpus and print one
per-class recall row per value. With the demo's scripted support classifier
the fused set shrinks as the graph side prunes, so high thresholds push
Relevant instances toward the correction branch."""

from pathlib import Path

from ger.cli import main as ger_main

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def main() -> None:
    ger_main(
        [
            "sweep",
            "--corpus", str(FIXTURES / "demo_corpus.json"),
            "--config", str(FIXTURES / "demo.cfg"),
            "--tau-node=-1.0:1.0:0.5",
            "--metric", "recall",
        ]
    )


if __name__ == "__main__":
    main()
