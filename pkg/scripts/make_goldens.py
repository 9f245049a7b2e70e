#!/usr/bin/env python3
"""Regenerate the committed forward-pass goldens under tests/goldens/.

Run from the repository root after any intentional numeric change:

    python scripts/make_goldens.py

The acceptance and CLI tests compare fresh forward passes against these
files, so regenerating them is an explicit, reviewable act.
"""

import pathlib
import sys

from cred.cli import main

ROOT = pathlib.Path(__file__).resolve().parent.parent
GOLDENS = ROOT / "tests" / "goldens"

VARIANTS = ("baseline", "dc", "default", "dcx025", "oo")


def run() -> int:
    GOLDENS.mkdir(parents=True, exist_ok=True)
    for variant in VARIANTS:
        code = main(
            ["forward", "--variant", variant, "--seed", "0",
             "--resolution", "64x64", "--write-goldens", str(GOLDENS)]
        )
        if code != 0:
            return code
    print(f"goldens refreshed under {GOLDENS}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
