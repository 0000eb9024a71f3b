"""Exact quenched probabilities, moments and bound shapes.

Everything here is a deterministic function of the potential on a finite
window. Sums of ``exp(V)`` are accumulated in the log domain because valley
depths of a few hundred log-odds units are routine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .environment import Environment
from .errors import DomainError


@dataclass(frozen=True)
class LogSum:
    """A positive sum carried as its logarithm."""

    value: float

    @classmethod
    def of(cls, log_terms: np.ndarray) -> "LogSum":
        return cls(float(logsumexp(log_terms)))

    def __add__(self, other: "LogSum") -> "LogSum":
        return LogSum(float(np.logaddexp(self.value, other.value)))

    def __truediv__(self, other: "LogSum") -> float:
        return math.exp(self.value - other.value)


@dataclass(frozen=True)
class Bound:
    """An inequality's right-hand side, raw and clamped to a probability."""

    raw: float
    clamped: float

    @classmethod
    def probability(cls, raw: float) -> "Bound":
        return cls(raw, min(max(raw, 0.0), 1.0))


def max_rise(values: np.ndarray) -> float:
    """``max_{x <= y} values[y] - values[x]`` in one sweep (0 for a single point)."""
    values = np.asarray(values, dtype=np.float64)
    return float(np.max(values - np.minimum.accumulate(values)))


def max_drop(values: np.ndarray) -> float:
    """``max_{x <= y} values[x] - values[y]`` in one sweep."""
    values = np.asarray(values, dtype=np.float64)
    return float(np.max(np.maximum.accumulate(values) - values))


def exit_prob_left(env: Environment, r: int, x: int, s: int) -> float:
    """``P^x(tau(r) < tau(s))`` for ``r < x < s``."""
    if not r < x < s:
        raise DomainError(f"need r < x < s, got {r}, {x}, {s}")
    V = env.potential_range(r, s - 1)
    return LogSum.of(V[x - r:]) / LogSum.of(V)


def exit_prob_right(env: Environment, r: int, x: int, s: int) -> float:
    """``P^x(tau(s) < tau(r))``, evaluated from its own partial sum."""
    if not r < x < s:
        raise DomainError(f"need r < x < s, got {r}, {x}, {s}")
    V = env.potential_range(r, s - 1)
    return LogSum.of(V[:x - r]) / LogSum.of(V)


def confined_expectation_bound(env: Environment, r: int, s: int) -> float:
    """``(s-r)^2 exp(max_{r<=i<=j<=s} V(i) - V(j))``, bounding the confined exit time."""
    if r >= s:
        raise DomainError(f"need r < s, got {r}, {s}")
    drop = max_drop(env.potential_range(r, s))
    return float((s - r) ** 2 * math.exp(drop)) if drop < 700 else math.inf


def hit_tail_bound(env: Environment, start: int, target: int, ell: int) -> Bound:
    """Upper bound on ``P^start(tau(target) < ell)``.

    For ``start < target`` this is ``ell * exp(-max_{start<=i<target} [V(target-1) - V(i)])``;
    for ``start > target`` the mirrored form with ``V(target+1)`` over
    ``target < i <= start``.
    """
    if ell < 1:
        raise DomainError(f"need ell >= 1, got {ell}")
    if start == target:
        raise DomainError("start and target must differ")
    if start < target:
        V = env.potential_range(start, target - 1)
        barrier = float(V[-1] - V.min())
    else:
        V = env.potential_range(target + 1, start)
        barrier = float(V[0] - V.min())
    return Bound.probability(ell * math.exp(-barrier))


def _log_edge_weight(env: Environment, x: int) -> float:
    # log(e^{-V(x-1)} + e^{-V(x)}): invariant measure of site x up to a constant
    V = env.potential_range(x - 1, x)
    return float(np.logaddexp(-V[0], -V[1]))


def excursion_mean_exact(env: Environment, b: int, x: int) -> float:
    """``E^b[xi(tau(b), x)]``: expected visits to ``x`` during one excursion from ``b``.

    Equals ``mu(x)/mu(b)`` with the reversible measure
    ``mu(y) = e^{-V(y-1)} + e^{-V(y)}``.
    """
    if x == b:
        raise DomainError("x must differ from the excursion anchor b")
    return math.exp(_log_edge_weight(env, x) - _log_edge_weight(env, b))


def excursion_mean_envelope(M: float) -> tuple[float, float]:
    """Range of ``excursion_mean_exact / exp(-[V(x)-V(b)])`` when ``|dV| <= M``."""
    lo = (1.0 + math.exp(-M)) / (1.0 + math.exp(M))
    return lo, 1.0 / lo


def excursion_var_bound(env: Environment, b: int, x: int) -> float:
    """Constant-free variance shape ``|x-b| exp(max_y V(y) - V(x)) exp(-[V(x)-V(b)])``.

    ``y`` ranges over the sites between ``b`` and ``x`` inclusive.
    """
    if x == b:
        raise DomainError("x must differ from the excursion anchor b")
    lo, hi = min(b, x), max(b, x)
    V = env.potential_range(lo, hi)
    vx = env.potential(x)
    vb = env.potential(b)
    return abs(x - b) * math.exp(float(V.max()) - vx - (vx - vb))


def escape_prob(env: Environment, left: int, x: int) -> float:
    """``pi_x = P^x(tau(left) < tau(x))``, the success parameter of the visit count."""
    if left >= x:
        raise DomainError(f"need left < x, got {left}, {x}")
    V = env.potential_range(left, x - 1)
    return (1.0 - env.site(x)) / math.exp(float(logsumexp(V - V[-1])))
