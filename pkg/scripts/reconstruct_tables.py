"""Recompute forget, retain and overall scores from the per-kind accuracy columns of reference tables.

Rows whose printed scores disagree with the recomputation by more than 0.1 are flagged.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from kgprobe.scorer import scores_from_percent, spearman, spearman_pvalue

DEFAULT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "reference_tables.json"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tables", type=Path, default=DEFAULT)
    args = ap.parse_args()
    tables = json.loads(args.tables.read_text(encoding="utf-8"))

    flagged = 0
    for name, rows in tables.items():
        if not isinstance(rows, list):
            continue
        print(f"\n{name}")
        print(f"  {'method':<22} {'forget':>13} {'retain':>13} {'overall':>13}")
        for row in rows:
            f, r, o = scores_from_percent(row["acc"])
            off = max(abs(f - row["forget"]), abs(r - row["retain"]), abs(o - row["overall"])) > 0.1 + 1e-9
            flagged += off
            cells = [f"{c:6.2f}/{p:<6}" for c, p in ((f, row["forget"]), (r, row["retain"]), (o, row["overall"]))]
            print(f"  {row['method']:<22} {' '.join(cells)}{'  <-- differs' if off else ''}")

    t = tables.get("rwku_static_vs_dynamic")
    if t:
        body = [r for r in t["rows"] if r["method"] != "Target model"]
        rho = spearman([r["multihop_forget"] for r in body], [r["forget_set_all"] for r in body])
        print(f"\nrank correlation over {len(body)} methods: rho={rho:.3f} "
              f"p={spearman_pvalue(rho, len(body)):.2e} (printed {t['rho_forget']})")
    print(f"\n{flagged} row(s) differ from their printed scores by more than 0.1")


if __name__ == "__main__":
    main()
