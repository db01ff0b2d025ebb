"""Run six evaluation conditions end to end against the offline stub, then report.

Each condition is a ``dcot eval`` run on a synthetic benchmark; a final
``dcot report`` pivots the aggregates into the comparison layout and draws the
Pareto front. The stub's accuracy and Null rate are knobs, so the numbers only
exercise the plumbing.

    python scripts/stub_condition_sweep.py --items 12032 --out-dir runs/sweep
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from dcot.cli import run

# label, temperature mode, prompt variant, stub accuracy, stub Null rate
CONDITIONS = [
    ("base", "locked", "base", 0.55, 0.30),
    ("base", "locked", "custom", 0.58, 0.25),
    ("base", "dynamic", "custom", 0.57, 0.25),
    ("dcot", "locked", "base", 0.64, 0.05),
    ("dcot", "locked", "custom", 0.63, 0.02),
    ("dcot", "dynamic", "custom", 0.63, 0.04),
]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--items", type=int, default=2000)
    ap.add_argument("--benchmark", default="mmlu-pro")
    ap.add_argument("--seeds", type=int, default=1)
    ap.add_argument("--out-dir", type=Path, default=Path("runs/stub-sweep"))
    args = ap.parse_args()

    metrics = []
    for label, mode, prompt, acc, null in CONDITIONS:
        name = f"{label} {mode}/{prompt}"
        out = args.out_dir / f"{label}-{mode}-{prompt}"
        t0 = time.perf_counter()
        code = run(["eval", "--benchmark", args.benchmark, "--synthetic", str(args.items), "--stub-mc",
                    "--stub-accuracy", str(acc), "--stub-null-rate", str(null), "--mode", mode,
                    "--prompt", prompt, "--model-label", label, "--condition", name,
                    "--seeds", str(args.seeds), "--no-text", "--out-dir", str(out)])
        if code:
            raise SystemExit(code)
        print(f"  ({time.perf_counter() - t0:.1f}s)")
        metrics.append(str(out / "metrics.csv"))
    raise SystemExit(run(["report", *metrics, "--baseline", "base locked/base",
                          "--out-dir", str(args.out_dir / "report")]))


if __name__ == "__main__":
    main()
