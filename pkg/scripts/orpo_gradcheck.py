"""Check the analytic ORPO gradients against high-precision finite differences.

    python scripts/orpo_gradcheck.py --instances 500 --seed 3
"""

from __future__ import annotations

import argparse
import math
import time

from dcot.gradcheck import run_gradient_check
from dcot.orpo import DEFAULT_LAMBDA, orpo_loss


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tol", type=float, default=1e-5)
    args = ap.parse_args()

    t0 = time.perf_counter()
    res = run_gradient_check(args.instances, args.seed)
    elapsed = time.perf_counter() - t0
    print(f"{res.instances} instances in {elapsed:.1f}s; max relative error {res.max_rel_error:.3e} "
          f"({'PASS' if res.passed(args.tol) else 'FAIL'} at {args.tol:g})")

    b = orpo_loss([-0.5], [-2.0], DEFAULT_LAMBDA)
    print(f"chosen avg -0.5, rejected avg -2.0, lambda {DEFAULT_LAMBDA}: "
          f"loss_or={b.loss_or:.17g} loss_total={b.loss_total:.17g}")
    eq = orpo_loss([-1.0, -0.2], [-0.6, -0.6], DEFAULT_LAMBDA)
    print(f"equal likelihoods: loss_or - ln 2 = {eq.loss_or - math.log(2):.1e}")
    raise SystemExit(0 if res.passed(args.tol) else 1)


if __name__ == "__main__":
    main()
