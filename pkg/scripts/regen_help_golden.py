"""Rewrite tests/golden/help_*.txt from the current CLI.

Run after changing any flag; the golden test formats help at 100 columns.
"""
import os
from pathlib import Path

os.environ["COLUMNS"] = "100"

from sonoholo.cli import COMMANDS, help_text  # noqa: E402

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden"


def main():
    GOLDEN.mkdir(exist_ok=True)
    for name in [None, *COMMANDS]:
        path = GOLDEN / f"help_{name or 'main'}.txt"
        path.write_text(help_text(name))
        print(path)


if __name__ == "__main__":
    main()
