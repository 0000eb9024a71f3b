"""Small statistical helpers shared by the experiment drivers."""

from __future__ import annotations

import math

from scipy import stats


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n) if n else float("nan")


def wilson_ci(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval; ``(nan, nan)`` for an empty sample."""
    if n == 0:
        return float("nan"), float("nan")
    ci = stats.binomtest(int(successes), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def frequency(successes: int, n: int) -> dict:
    lo, hi = wilson_ci(successes, n)
    return {
        "successes": int(successes),
        "n": int(n),
        "estimate": successes / n if n else None,
        "ci_low": None if n == 0 else lo,
        "ci_high": None if n == 0 else hi,
    }


def kendall_tau(xs, ys) -> float:
    tau = stats.kendalltau(xs, ys).statistic
    return float(tau)
