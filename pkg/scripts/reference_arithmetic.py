"""Recompute derived columns from the reference result rows.

Prints the Null-corrected GPQA score, the token reductions against the base
condition and the MMLU-Pro accuracy/token Pareto front.

    python scripts/reference_arithmetic.py [--out-dir DIR]
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

from dcot.evalharness import null_corrected, pareto_front, token_reduction, write_pareto

# method, temp, prompt, mmlu acc %, mmlu tokens, gpqa acc %, gpqa null %, gpqa corrected % (as reported), gpqa tokens
REFERENCE_ROWS = [
    ("Base", "Locked", "Base", 55.66, 1742, 43.03, 30.91, 50.76, 5875),
    ("Base", "Locked", "Custom", 58.24, 1595, 45.05, 24.44, 51.16, 5539),
    ("Base", "Dynamic", "Custom", 57.64, 1600, 45.05, 24.44, 51.16, 5539),
    ("D-CoT", "Locked", "Base", 64.73, 1496, 52.82, 4.24, 53.88, 2772),
    ("D-CoT", "Locked", "Custom", 62.92, 1199, 51.41, 1.82, 53.27, 2073),
    ("D-CoT", "Dynamic", "Custom", 63.43, 1202, 52.93, 3.54, 54.47, 2153),
]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path)
    args = ap.parse_args()

    base = REFERENCE_ROWS[0]
    rows = []
    for method, temp, prompt, m_acc, m_tok, g_acc, g_null, g_rep, g_tok in REFERENCE_ROWS:
        corr = 100 * null_corrected(g_acc / 100, g_null / 100, 4)
        rows.append({
            "condition": f"{method} {temp}/{prompt}",
            "gpqa_corrected_reported": f"{g_rep:.2f}",
            "gpqa_corrected_recomputed": f"{corr:.2f}",
            "matches": round(corr, 2) == g_rep,
            "mmlu_token_reduction_pct": f"{100 * token_reduction(base[4], m_tok):.1f}",
            "gpqa_token_reduction_pct": f"{100 * token_reduction(base[8], g_tok):.1f}",
        })
    points = pareto_front([(r["condition"], ref[3], ref[4]) for r, ref in zip(rows, REFERENCE_ROWS)])

    for r, p in zip(rows, points):
        flag = "front" if p.on_front else ""
        print(f"{r['condition']:<22} corrected {r['gpqa_corrected_recomputed']:>6} "
              f"(reported {r['gpqa_corrected_reported']}, {'ok' if r['matches'] else 'MISMATCH'})  "
              f"tokens -{r['mmlu_token_reduction_pct']}% / -{r['gpqa_token_reduction_pct']}%  {flag}")

    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        with open(args.out_dir / "reference_arithmetic.csv", "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        write_pareto(points, args.out_dir / "pareto_reference.csv", args.out_dir / "pareto_reference.vl.json",
                     title="MMLU-Pro reference conditions")
        print(f"wrote {args.out_dir}")


if __name__ == "__main__":
    main()
