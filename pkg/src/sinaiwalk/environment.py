"""I.i.d. random environments and their potential.

An :class:`Environment` is a lazily realized window of site probabilities
``omega_x``. Site values come from the keyed counter-based hash, so two
environments with equal ``(law, seed)`` agree everywhere no matter in which
order their windows were extended. The potential ``V`` is the cumulative
log-odds ``log((1 - omega)/omega)`` anchored at ``V(0) = 0``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import spence

from .errors import BudgetError, InvalidLawError
from .rng import derive_key, hash_uniforms

TWO_POINT = "two-point"
UNIFORM = "uniform-symmetric"

_MIN_GROW = 256


@dataclass(frozen=True)
class EnvironmentLaw:
    """Distribution of ``omega_0``.

    ``two-point``: ``omega`` is ``param`` or ``1 - param`` with mass 1/2 each.
    ``uniform-symmetric``: ``omega`` is uniform on ``[param, 1 - param]``.
    Both are symmetric under ``omega -> 1 - omega``, which makes the mean
    log-odds vanish exactly.
    """

    kind: str = TWO_POINT
    param: float = 0.25

    def __post_init__(self) -> None:
        if self.kind not in (TWO_POINT, UNIFORM):
            raise InvalidLawError(f"unknown law kind {self.kind!r}")
        p = float(self.param)
        if not (0.0 < p < 0.5):
            raise InvalidLawError(f"law parameter must lie in (0, 1/2), got {self.param!r}")

    @property
    def delta(self) -> float:
        return float(self.param)

    @property
    def M(self) -> float:
        return math.log((1.0 - self.delta) / self.delta)

    @property
    def sigma2(self) -> float:
        M = self.M
        if self.kind == TWO_POINT:
            return M * M
        # E[t^2] for t = log((1-w)/w), w ~ U[d, 1-d]; t has the logistic
        # density restricted to [-M, M], integrated by parts down to a dilog.
        j = math.pi ** 2 / 12.0 - M * math.log1p(math.exp(-M)) + float(spence(1.0 + math.exp(-M)))
        integral = -2.0 * M * M / (1.0 + math.exp(M)) + 4.0 * j
        return integral / (1.0 - 2.0 * self.delta)

    @property
    def is_lattice(self) -> bool:
        return self.kind == TWO_POINT

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms on [0, 1) to site probabilities."""
        d = self.delta
        if self.kind == TWO_POINT:
            return np.where(u < 0.5, d, 1.0 - d)
        return d + (1.0 - 2.0 * d) * u

    def to_dict(self) -> dict:
        return {"kind": self.kind, "param": float(self.param)}


DEFAULT_LAW = EnvironmentLaw()


def law_constants(law: EnvironmentLaw) -> tuple[float, float, float]:
    """Return ``(delta, M, sigma2)`` for ``law``."""
    return law.delta, law.M, law.sigma2


def log_odds(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=np.float64)
    return np.log1p(-omega) - np.log(omega)


class Environment:
    """A window of ``omega_x`` with cached potential values.

    Sampled environments grow on demand; fixture environments built with
    :meth:`from_omegas` or :meth:`from_potential` are confined to the sites
    they were given and raise :class:`BudgetError` outside them.
    """

    def __init__(self, law: EnvironmentLaw = DEFAULT_LAW, seed: int = 0):
        self.law = law
        self.seed = int(seed)
        self.key = derive_key(self.seed, "environment", law.kind, float(law.param))
        self._fixed = False
        self._lock = threading.Lock()
        self._win: tuple[int, np.ndarray, np.ndarray] | None = None
        self.ensure(-_MIN_GROW, _MIN_GROW)

    # -- construction of fixture windows -------------------------------------

    @classmethod
    def _fixture(cls, lo: int, omega: np.ndarray, V: np.ndarray, law: EnvironmentLaw | None) -> "Environment":
        env = cls.__new__(cls)
        env.law = law
        env.seed = -1
        env.key = 0
        env._fixed = True
        env._lock = threading.Lock()
        omega = np.asarray(omega, dtype=np.float64)
        V = np.asarray(V, dtype=np.float64)
        lo = int(lo)
        if len(omega) != len(V) or not (lo <= 0 <= lo + len(V) - 1):
            raise ValueError("fixture window must contain site 0")
        if V[-lo] != 0.0:
            raise ValueError("fixture potential must vanish at site 0")
        env._win = (lo, omega, V)
        return env

    @classmethod
    def from_omegas(cls, omegas: Iterable[float], first_site: int = 0,
                    law: EnvironmentLaw | None = None) -> "Environment":
        """Fixture from explicit ``omega_x`` for ``x = first_site, ...``."""
        omega = np.asarray(list(omegas), dtype=np.float64)
        if np.any((omega <= 0) | (omega >= 1)):
            raise ValueError("omega values must lie in (0, 1)")
        lo = int(first_site)
        hi = lo + len(omega) - 1
        if not (lo <= 0 <= hi):
            raise ValueError("fixture window must contain site 0")
        return cls._fixture(lo, omega, _potential_from_increments(log_odds(omega), lo), law)

    @classmethod
    def from_potential(cls, values: Iterable[float], first_site: int = 0,
                       law: EnvironmentLaw | None = None) -> "Environment":
        """Fixture from explicit potential values ``V(first_site), ...``.

        ``omega_x`` is recovered from ``V(x) - V(x-1)``; the leftmost site has
        no left neighbour and its ``omega`` stays undefined (NaN).
        """
        V = np.asarray(list(values), dtype=np.float64)
        lo = int(first_site)
        if not lo <= 0 < lo + len(V) or V[-lo] != 0.0:
            raise ValueError("fixture potential must contain site 0 with V(0) = 0")
        omega = np.full(len(V), np.nan)
        omega[1:] = 1.0 / (1.0 + np.exp(np.diff(V)))
        return cls._fixture(int(first_site), omega, V, law)

    @classmethod
    def from_table(cls, xs: Iterable[int], omegas: Iterable[float], Vs: Iterable[float],
                   law: EnvironmentLaw | None = None) -> "Environment":
        """Fixture from an exported ``(x, omega_x, V_x)`` table."""
        xs = np.asarray(list(xs), dtype=np.int64)
        if len(xs) == 0 or np.any(np.diff(xs) != 1):
            raise ValueError("sites must be consecutive and increasing")
        return cls._fixture(int(xs[0]), np.asarray(list(omegas), float), np.asarray(list(Vs), float), law)

    # -- window management ----------------------------------------------------

    @property
    def fixed(self) -> bool:
        return self._fixed

    @property
    def realized(self) -> tuple[int, int]:
        """Inclusive range of realized sites."""
        lo, _, V = self._win
        return lo, lo + len(V) - 1

    @property
    def M(self) -> float:
        if self.law is not None:
            return self.law.M
        d = np.abs(np.diff(self._win[2]))
        return float(d.max()) if len(d) else 0.0

    @property
    def delta(self) -> float:
        if self.law is not None:
            return self.law.delta
        return 1.0 / (1.0 + math.exp(self.M))

    def ensure(self, lo: int, hi: int) -> None:
        """Make sure sites ``lo..hi`` are realized."""
        if self._win is not None:
            cur_lo, cur_hi = self.realized
            if cur_lo <= lo and hi <= cur_hi:
                return
            if self._fixed:
                raise BudgetError(f"sites [{lo}, {hi}] outside fixture window [{cur_lo}, {cur_hi}]")
        with self._lock:
            if self._win is None:
                new_lo, new_hi = min(lo, 0), max(hi, 0)
            else:
                cur_lo, cur_hi = self.realized
                if cur_lo <= lo and hi <= cur_hi:
                    return
                # geometric growth keeps repeated extensions amortized O(1) per site
                width = max(cur_hi - cur_lo + 1, _MIN_GROW)
                new_lo = min(lo, cur_lo - width) if lo < cur_lo else cur_lo
                new_hi = max(hi, cur_hi + width) if hi > cur_hi else cur_hi
            if self._win is None:
                sites = np.arange(new_lo, new_hi + 1, dtype=np.int64)
                omega = self.law.sample(hash_uniforms(self.key, sites))
                V = self._build_potential(omega, new_lo)
            else:
                # only the new sites are drawn; V continues outward from the old ends
                cur_lo, cur_omega, cur_V = self._win
                cur_hi = cur_lo + len(cur_V) - 1
                left = self.law.sample(hash_uniforms(self.key, np.arange(new_lo, cur_lo, dtype=np.int64)))
                right = self.law.sample(hash_uniforms(self.key, np.arange(cur_hi + 1, new_hi + 1,
                                                                          dtype=np.int64)))
                omega = np.concatenate((left, cur_omega, right))
                inc_l = self._increments(np.concatenate((left, cur_omega[:1])))[1:][::-1]
                V_left = -self._continue(-cur_V[0], inc_l)[::-1]
                V_right = self._continue(cur_V[-1], self._increments(right))
                V = np.concatenate((V_left, cur_V, V_right))
            if np.any(np.abs(np.diff(V)) > self.law.M + 1e-9 * (1.0 + np.abs(V).max())):
                raise AssertionError("potential increment exceeds M")
            # single attribute swap: readers see the old or the new window, never a mix
            self._win = (new_lo, omega, V)

    def _increments(self, omega: np.ndarray) -> np.ndarray:
        if self.law.is_lattice:
            return np.where(omega < 0.5, 1, -1).astype(np.int64)
        return log_odds(omega)

    def _continue(self, start: float, inc: np.ndarray) -> np.ndarray:
        """Partial sums ``start + inc[0], start + inc[0] + inc[1], ...``.

        Summation runs in the same order as a full rebuild, so a window's
        values never depend on how it was grown.
        """
        if self.law.is_lattice:
            units = np.cumsum(np.concatenate(([int(round(start / self.law.M))], inc)))[1:]
            return units.astype(np.float64) * self.law.M
        return np.cumsum(np.concatenate(([start], inc)))[1:]

    def _build_potential(self, omega: np.ndarray, lo: int) -> np.ndarray:
        if self.law.is_lattice:
            units = np.where(omega < 0.5, 1, -1).astype(np.int64)
            return _potential_from_increments(units, lo).astype(np.float64) * self.law.M
        return _potential_from_increments(log_odds(omega), lo)

    # -- queries ----------------------------------------------------------------

    def site(self, x: int) -> float:
        """``omega_x``."""
        x = int(x)
        self.ensure(x, x)
        lo, omega, _ = self._win
        w = float(omega[x - lo])
        if math.isnan(w):
            raise BudgetError(f"omega at site {x} is not defined by the fixture")
        return w

    def potential(self, x: int) -> float:
        """``V(x)``."""
        x = int(x)
        self.ensure(x, x)
        lo, _, V = self._win
        return float(V[x - lo])

    def omega_range(self, lo: int, hi: int) -> np.ndarray:
        """Copy of ``omega_x`` for ``x = lo..hi`` inclusive."""
        self.ensure(lo, hi)
        base, omega, _ = self._win
        return omega[lo - base:hi - base + 1].copy()

    def potential_range(self, lo: int, hi: int) -> np.ndarray:
        """Copy of ``V(x)`` for ``x = lo..hi`` inclusive."""
        self.ensure(lo, hi)
        base, _, V = self._win
        return V[lo - base:hi - base + 1].copy()

    def reflected(self, lo: int | None = None, hi: int | None = None) -> "Environment":
        """Fixture whose potential is ``x -> V(-x)`` on the mirrored window.

        The mirrored chain has ``omega'_x = 1 - omega_{1-x}``, so the minus-side
        valley of this environment becomes the plus-side valley of the result.
        """
        r_lo, r_hi = self.realized
        lo = r_lo if lo is None else lo
        hi = r_hi if hi is None else hi
        V = self.potential_range(lo, hi)[::-1]
        return Environment.from_potential(V, first_site=-hi, law=self.law)

    def table(self, lo: int, hi: int) -> list[tuple[int, float, float]]:
        """Rows ``(x, omega_x, V_x)`` in increasing site order."""
        omega = self.omega_range(lo, hi)
        V = self.potential_range(lo, hi)
        return [(x, float(w), float(v)) for x, w, v in zip(range(lo, hi + 1), omega, V)]


def _potential_from_increments(inc: np.ndarray, lo: int) -> np.ndarray:
    """Cumulate per-site increments into ``V`` with ``V(0) = 0``.

    ``inc[i]`` belongs to site ``lo + i``; ``V(x) - V(x-1) = inc(x)``.
    """
    inc = np.asarray(inc)
    zero = -lo
    V = np.zeros(len(inc), dtype=inc.dtype)
    if zero + 1 < len(inc):
        V[zero + 1:] = np.cumsum(inc[zero + 1:])
    if zero > 0:
        # V(-1) = -inc(0), V(-2) = -inc(0) - inc(-1), ...
        V[:zero] = -np.cumsum(inc[zero:0:-1])[::-1]
    return V
