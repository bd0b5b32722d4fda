#!/usr/bin/env python3
"""Regenerate the bundled demo fixtures (corpus, scripted responses, config)."""

from pathlib import Path

from ger.demo import write_demo_fixtures


def main() -> None:
    target = Path(__file__).resolve().parent.parent / "fixtures"
    paths = write_demo_fixtures(target)
    for name, path in paths.items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
