"""Finite-difference verification of the ORPO gradients.

The reference loss is re-derived here in mpmath from the closed form, so the
check does not share code with ``dcot.orpo``. Central differences are taken in
50-digit arithmetic; in float64 the cancellation error (~1e-10) would swamp
the smallest rejected-side gradients, which can be below 1e-6.
"""

from __future__ import annotations

from dataclasses import dataclass

import mpmath
import numpy as np

from dcot.orpo import orpo_gradients

FD_STEP = 1e-6
LAMBDAS = (0.0, 0.1, 1.0)


def reference_loss(chosen, rejected, lam, dps: int = 50):
    with mpmath.workdps(dps):
        def log_odds(lps):
            avg = mpmath.fsum(mpmath.mpf(x) for x in lps) / len(lps)
            p = mpmath.exp(avg)
            return avg, mpmath.log(p / (1 - p))

        avg_c, lo_c = log_odds(chosen)
        _, lo_r = log_odds(rejected)
        loss_or = mpmath.log(1 + mpmath.exp(-(lo_c - lo_r)))
        return -avg_c + mpmath.mpf(lam) * loss_or


def fd_gradients(chosen, rejected, lam, step: float = FD_STEP, dps: int = 50):
    with mpmath.workdps(dps):
        h = mpmath.mpf(step)

        def partial(seq_is_chosen, i):
            def bumped(delta):
                c = [mpmath.mpf(x) for x in chosen]
                r = [mpmath.mpf(x) for x in rejected]
                (c if seq_is_chosen else r)[i] += delta
                return reference_loss(c, r, lam, dps)
            return (bumped(h) - bumped(-h)) / (2 * h)

        gc = [float(partial(True, i)) for i in range(len(chosen))]
        gr = [float(partial(False, i)) for i in range(len(rejected))]
    return np.array(gc), np.array(gr)


def relative_error(analytic, numeric) -> float:
    a, f = np.asarray(analytic, float), np.asarray(numeric, float)
    denom = np.maximum(np.abs(a), np.abs(f))
    err = np.where(denom == 0, 0.0, np.abs(a - f) / np.where(denom == 0, 1.0, denom))
    return float(err.max(initial=0.0))


@dataclass
class GradCheckResult:
    instances: int
    max_rel_error: float
    worst: dict

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_rel_error <= tol


def random_instance(rng: np.random.Generator):
    lc, lr = rng.integers(1, 17, size=2)
    return (rng.uniform(-5.0, -0.01, lc).tolist(), rng.uniform(-5.0, -0.01, lr).tolist(),
            float(rng.choice(LAMBDAS)))


def run_gradient_check(n: int = 100, seed: int = 0) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    worst, worst_err = {}, 0.0
    for k in range(n):
        chosen, rejected, lam = random_instance(rng)
        ac, ar = orpo_gradients(chosen, rejected, lam)
        fc, fr = fd_gradients(chosen, rejected, lam)
        err = max(relative_error(ac, fc), relative_error(ar, fr))
        if err >= worst_err:
            worst_err = err
            worst = {"instance": k, "lambda": lam, "len_chosen": len(chosen), "len_rejected": len(rejected)}
    return GradCheckResult(n, worst_err, worst)
