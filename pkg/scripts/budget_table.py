#!/usr/bin/env python3
"""Print per-variant compute budgets at full scale, plus the headline ratios.

    python scripts/budget_table.py                 # table at 800x1280
    python scripts/budget_table.py --csv           # machine-readable
    python scripts/budget_table.py --resolution 512x512
"""

import argparse
import dataclasses

from cred.config import for_variant, paper_config
from cred.flops import budget_report, format_budget_table

VARIANTS = ("baseline", "dc", "default", "dcx025", "oo")


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--resolution", default="800x1280", help="HxW input size")
    parser.add_argument("--csv", action="store_true")
    args = parser.parse_args(argv)

    h, w = (int(v) for v in args.resolution.lower().split("x"))
    base = dataclasses.replace(paper_config(), image=(h, w))
    budgets = {v: budget_report(for_variant(v, base)) for v in VARIANTS}
    print(format_budget_table(list(budgets.values()), csv=args.csv))
    if not args.csv:
        dc, base_b = budgets["dc"], budgets["baseline"]
        print()
        print(f"decoder-cross / baseline decoder cost: "
              f"{dc.decoder / base_b.decoder:.2f}x")
        cred = budgets["default"]
        print(f"CRED overhead (osma + cram) as share of its total: "
              f"{(cred.osma + cred.cram) / cred.total:.1%}")
    return 0


if __name__ == "__main__":
    raise SystemExit(run())
