"""Valley functionals of the potential, the valley event battery, and the
fine-grained first-passage geometry used to estimate event probabilities.

All scans work on a half-line profile ``w``: ``w(i) = V(i)`` on the plus
side and ``w(i) = V(-i)`` on the minus side, ``i = 0, 1, ...``. Both valley
bottoms are then the *smallest* argmin index of the profile, and the
pairwise maxima reduce to running-extremum sweeps.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .environment import Environment
from .errors import BudgetError, DomainError
from .quenched import max_drop, max_rise

PLUS, MINUS = "plus", "minus"
DEFAULT_C5 = 10.0
BETA = 3.0 - 1.0 / 1000.0
GAMMA = 3.0 + 1.0 / 1000.0

PLUS_FLAGS = ("E1+", "E2+", "E3+", "E4+")
MINUS_FLAGS = ("E1-", "E2-", "E3-", "E4-", "E5-")


def default_budget(j: float) -> int:
    return int(math.ceil(10.0 * j ** 3))


def default_C4(env: Environment) -> float:
    return env.delta ** 3 / 2.0


class HalfLine:
    """Lazily extended profile ``w(0..n)`` of one side of the potential."""

    def __init__(self, env: Environment, side: str, budget: int):
        if side not in (PLUS, MINUS):
            raise DomainError(f"side must be {PLUS!r} or {MINUS!r}")
        self.env, self.side, self.budget = env, side, int(budget)
        self._w = np.empty(0)
        self._run: dict[str, np.ndarray] = {}

    def _limit(self) -> int:
        if self.env.fixed:
            lo, hi = self.env.realized
            return min(self.budget, hi if self.side == PLUS else -lo)
        return self.budget

    def values(self, n: int) -> np.ndarray:
        if len(self._w) <= n:
            limit = self._limit()
            if n > limit:
                raise BudgetError(f"{self.side} profile needs {n} sites, limit {limit}")
            m = min(max(n, 2 * len(self._w), 255), limit)
            if self.side == PLUS:
                self._w = self.env.potential_range(0, m)
            else:
                self._w = self.env.potential_range(-m, 0)[::-1].copy()
            self._run = {}
        return self._w[:n + 1]

    def first(self, level: float, above: bool, start: int = 0, strict: bool = False) -> int:
        """First ``i >= start`` with ``w(i) >= level`` (``above``) or ``w(i) <= level``.

        ``strict`` turns the comparison into ``>`` / ``<``.
        """
        n = max(len(self._w) - 1, start + 255)
        limit = self._limit()
        if start == 0 and not strict:
            return self._first_from_origin(level, above, n, limit)
        while True:
            n = min(n, limit)
            seg = self.values(n)[start:]
            if above:
                hit = seg > level if strict else seg >= level
            else:
                hit = seg < level if strict else seg <= level
            if hit.any():
                return start + int(np.argmax(hit))
            if n >= limit:
                raise BudgetError(f"{self.side} profile never crosses {level} within {limit} sites")
            n *= 2

    def prefix(self, kind: str) -> np.ndarray:
        """Running statistics over the fetched profile, cached until it grows.

        ``min``/``max``: running extrema; ``rise``: largest rise within
        ``[0, i]``; ``lse``: ``log sum_{t <= i} exp(-w(t))``.
        """
        arr = self._run.get(kind)
        if arr is None:
            w = self._w
            if kind == "min":
                arr = np.minimum.accumulate(w)
            elif kind == "max":
                arr = np.maximum.accumulate(w)
            elif kind == "rise":
                arr = np.maximum.accumulate(w - self.prefix("min"))
            elif kind == "lse":
                arr = np.logaddexp.accumulate(-w)
            else:
                raise KeyError(kind)
            self._run[kind] = arr
        return arr

    def _first_from_origin(self, level: float, above: bool, n: int, limit: int) -> int:
        # running extrema are monotone, so repeated queries cost a binary search
        while True:
            n = min(n, limit)
            self.values(n)
            run = self.prefix("max") if above else -self.prefix("min")
            i = int(np.searchsorted(run, level if above else -level, side="left"))
            if i < len(run) and i <= limit:
                return i
            if n >= limit or len(self._w) - 1 >= limit:
                raise BudgetError(f"{self.side} profile never crosses {level} within {limit} sites")
            n = 2 * max(n, len(self._w) - 1)


def _site(side: str, i: int) -> int:
    return i if side == PLUS else -i


@dataclass(frozen=True)
class ValleyMarks:
    side: str
    j: float
    d: int
    b: int


def _marks_on(profile: HalfLine, j: float, limit: int | None = None) -> tuple[int, int, np.ndarray]:
    d = profile.first(j, above=True)
    if limit is not None and d > limit:
        raise BudgetError(f"{profile.side} valley at level {j} ends at {d}, beyond {limit} sites")
    w = profile.values(d)
    # the running minimum is nonincreasing, so its first attainment is a binary search
    neg_min = -profile.prefix("min")
    b = int(np.searchsorted(neg_min, neg_min[d], side="left"))
    return d, b, w


def valley_marks(env: Environment, j: float, side: str, budget: int | None = None) -> ValleyMarks:
    """``d(j)``: first site (outward from 0) with ``V >= j``; ``b(j)``: the extremal argmin before it.

    Plus side: smallest argmin on ``[0, d]``; minus side: largest argmin on ``[d, 0]``.
    """
    if j <= 0:
        raise DomainError(f"need j > 0, got {j}")
    profile = HalfLine(env, side, default_budget(j) if budget is None else budget)
    d, b, _ = _marks_on(profile, j)
    return ValleyMarks(side, float(j), _site(side, d), _site(side, b))


@dataclass
class EventReport:
    """Event flags at level ``j`` together with the quantities they are decided from."""

    j: float
    C4: float | None = None
    C5: float | None = None
    plus: ValleyMarks | None = None
    minus: ValleyMarks | None = None
    quantities: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    @property
    def E_plus(self) -> bool:
        return all(self.flags.get(k, False) for k in PLUS_FLAGS)

    @property
    def E_minus(self) -> bool:
        return all(self.flags.get(k, False) for k in MINUS_FLAGS)

    @property
    def special(self) -> bool:
        return self.E_plus and self.E_minus

    def recompute_flags(self) -> dict:
        """Flags re-derived from the stored quantities alone."""
        out = {}
        q = self.quantities
        if "V_b+" in q:
            out.update(_plus_flags(q, self.j, self.C4))
        if "V_b-" in q:
            out.update(_minus_flags(q, self.j, self.C5))
        return out

    def merge(self, other: "EventReport") -> "EventReport":
        return EventReport(
            self.j,
            self.C4 if self.C4 is not None else other.C4,
            self.C5 if self.C5 is not None else other.C5,
            self.plus or other.plus,
            self.minus or other.minus,
            {**self.quantities, **other.quantities},
            {**self.flags, **other.flags},
            {**self.errors, **other.errors},
        )

    def to_dict(self) -> dict:
        flags = dict(self.flags)
        flags["E+"] = self.E_plus
        flags["E-"] = self.E_minus
        return {
            "j": self.j,
            "C4": self.C4,
            "C5": self.C5,
            "plus": asdict(self.plus) if self.plus else None,
            "minus": asdict(self.minus) if self.minus else None,
            "quantities": self.quantities,
            "flags": flags,
            "errors": self.errors,
        }


def _plus_flags(q: dict, j: float, C4: float) -> dict:
    return {
        "E1+": -2 * j <= q["V_b+"] <= -j,
        "E2+": q["rise_0_b+"] <= j / 4,
        "E3+": q["drop_b+_d+"] <= j,
        "E4+": q["mass+"] >= C4 * math.log(math.log(j)),
    }


def _minus_flags(q: dict, j: float, C5: float) -> dict:
    return {
        "E1-": q["V_b-"] <= -3 * j,
        "E2-": q["max_b-_0"] >= j / 3,
        "E3-": q["drop_b-_0"] <= j / 2,
        "E4-": j / 3 <= q["rise_d-_b-"] <= j,
        "E5-": q["mass-"] <= 1 + C5,
    }


def _mass(profile: HalfLine, b: int, d: int) -> float:
    """``sum_{0 <= i <= d} exp(-(w(i) - w(b)))`` from the running log-sum."""
    return float(np.exp(profile.prefix("lse")[d] + profile.values(d)[b]))


def detect_plus_events(env: Environment, j: float, C4: float | None = None,
                       budget: int | None = None, profile: HalfLine | None = None) -> EventReport:
    """Evaluate the four plus-side events at level ``j`` (requires ``j > e``)."""
    if j <= math.e:
        raise DomainError(f"plus events need j > e, got {j}")
    C4 = default_C4(env) if C4 is None else C4
    limit = default_budget(j) if budget is None else budget
    profile = profile or HalfLine(env, PLUS, limit)
    d, b, w = _marks_on(profile, j, limit)
    q = {
        "V_b+": float(w[b]),
        "rise_0_b+": float(profile.prefix("rise")[b]),
        "drop_b+_d+": max_drop(w[b:d + 1]),
        "mass+": _mass(profile, b, d),
    }
    return EventReport(float(j), C4=C4, plus=ValleyMarks(PLUS, float(j), d, b),
                       quantities=q, flags=_plus_flags(q, j, C4))


def detect_minus_events(env: Environment, j: float, C5: float = DEFAULT_C5,
                        budget: int | None = None, profile: HalfLine | None = None) -> EventReport:
    """Evaluate the five minus-side events at level ``j``."""
    if j <= 0:
        raise DomainError(f"need j > 0, got {j}")
    limit = default_budget(j) if budget is None else budget
    profile = profile or HalfLine(env, MINUS, limit)
    d, b, w = _marks_on(profile, j, limit)
    # In profile coordinates the site order is reversed: a drop of V read
    # left-to-right on [b-, 0] is a rise of w on [0, |b-|], and so on.
    q = {
        "V_b-": float(w[b]),
        "max_b-_0": float(profile.prefix("max")[b]),
        "drop_b-_0": float(profile.prefix("rise")[b]),
        "rise_d-_b-": max_drop(w[b:d + 1]),
        "mass-": _mass(profile, b, d),
    }
    return EventReport(float(j), C5=C5, minus=ValleyMarks(MINUS, float(j), -d, -b),
                       quantities=q, flags=_minus_flags(q, j, C5))


def detect_events(env: Environment, j: float, C4: float | None = None, C5: float = DEFAULT_C5,
                  budget: int | None = None, profiles: tuple[HalfLine, HalfLine] | None = None
                  ) -> EventReport:
    """Both sides at level ``j``; a side that runs out of budget records an error instead."""
    report = EventReport(float(j), C4=default_C4(env) if C4 is None else C4, C5=C5)
    plus_p, minus_p = profiles if profiles else (None, None)
    try:
        report = report.merge(detect_plus_events(env, j, report.C4, budget, plus_p))
    except BudgetError as exc:
        report.errors[PLUS] = str(exc)
    try:
        report = report.merge(detect_minus_events(env, j, C5, budget, minus_p))
    except BudgetError as exc:
        report.errors[MINUS] = str(exc)
    return report


def fluctuation_implication(report: EventReport, env: Environment) -> bool:
    """Check ``max_{b- <= x <= y <= d+} V(x) - V(y) <= 5j/2`` when its premises hold.

    The premises are E3-, E1+, E2+ and E3+; otherwise the implication is
    vacuously true.
    """
    premises = ("E3-", "E1+", "E2+", "E3+")
    if not all(report.flags.get(k, False) for k in premises):
        return True
    V = env.potential_range(report.minus.b, report.plus.d)
    return max_drop(V) <= 2.5 * report.j * (1 + 1e-12)


def scan_events(env: Environment, j_grid: Sequence[float], C4: float | None = None,
                C5: float = DEFAULT_C5, budget: int | None = None) -> list[EventReport]:
    """Event reports for every ``j`` in an increasing grid (budget errors kept per ``j``)."""
    js = [float(j) for j in j_grid]
    if any(b <= a for a, b in zip(js, js[1:])):
        raise DomainError("j grid must be strictly increasing")
    if any(j <= math.e for j in js):
        raise DomainError("every j must exceed e")
    top = default_budget(js[-1]) if budget is None else budget
    profiles = (HalfLine(env, PLUS, top), HalfLine(env, MINUS, top))
    # one profile per side sized for the largest j; each j still enforces its own budget
    return [detect_events(env, j, C4, C5, budget, profiles) for j in js]


def find_special_js(env: Environment, j_grid: Sequence[float], C4: float | None = None,
                    C5: float = DEFAULT_C5, budget: int | None = None) -> list[tuple[float, EventReport]]:
    """Grid points at which all nine events hold."""
    return [(r.j, r) for r in scan_events(env, j_grid, C4, C5, budget) if r.special]


# -- first passage of the potential ---------------------------------------------------

@dataclass(frozen=True)
class FirstPassage:
    kind: str       # "upper-first" or "lower-first"
    site: int


def first_passage_potential(env: Environment, z: float, upper: float, lower: float,
                            side: str = PLUS, lower_strict: bool = False,
                            budget: int = 10 ** 7) -> FirstPassage:
    """Which half-line the shifted potential ``z + w(i)`` enters first.

    Targets are ``[upper, inf)`` and ``(-inf, lower]`` (``(-inf, lower)`` with
    ``lower_strict``). ``side="minus"`` walks ``V(-i)``.
    """
    if not lower < upper:
        raise DomainError(f"need lower < upper, got {lower}, {upper}")
    profile = HalfLine(env, side, budget)
    n = 255
    while True:
        n = min(n, profile._limit())
        u = z + profile.values(n)
        up = u >= upper
        down = u < lower if lower_strict else u <= lower
        hit = up | down
        if hit.any():
            i = int(np.argmax(hit))
            return FirstPassage("upper-first" if up[i] else "lower-first", _site(side, i))
        if n >= profile._limit():
            raise BudgetError(f"neither level reached within {n} sites")
        n *= 2


def martingale_lower_bound(x: float, y: float, z: float, M: float, upper_first: bool = True) -> float:
    """Lower bounds on first-passage probabilities of a potential started at ``y``.

    ``upper_first``: ``P_y(reach [z, inf) before (-inf, x]) >= (y-x)/(z-x+M)``;
    otherwise ``P_y(reach (-inf, x) before [z, inf)) >= (z-y)/(z-x+M)``.
    """
    if not x < y < z:
        raise DomainError(f"need x < y < z, got {x}, {y}, {z}")
    return ((y - x) if upper_first else (z - y)) / (z - x + M)


# -- ladder of levels a_l on the plus side -----------------------------------------------

@dataclass
class LadderDecomposition:
    j: float
    ell: int
    levels: tuple[float, float, float]      # a_l, a_{l+1}, a_{l+2}
    taus: list[int]
    Ts: list[int]
    alpha: int | None
    L: int
    T_tilde: int | None
    d_plus: int
    min_before_d: float
    ladder_event: bool


def ladder_alpha(j: float) -> int | None:
    """``floor(log(log j) / 2)``; ``None`` when ``j <= e``."""
    if j <= math.e:
        return None
    # the guard keeps j = exp(exp(2k)) on the right side of an integer
    return math.floor(0.5 * math.log(math.log(j)) + 1e-12)


def ladder_decompose(env: Environment, j: float, ell: int, z: float = 0.0,
                     budget: int | None = None) -> LadderDecomposition:
    """Crossing structure of the potential (shifted by ``z``) around the band ``[a_l, a_{l+1}]``.

    ``a_l = -2j + 3 M l``. ``taus``/``Ts`` alternate down- and up-crossings of
    ``a_{l+1}`` on ``[0, d+(j)]``; ``L`` counts sites in the band.
    """
    if j <= 0:
        raise DomainError(f"need j > 0, got {j}")
    M = env.M
    a0, a1, a2 = (-2 * j + 3 * M * (ell + k) for k in range(3))
    profile = HalfLine(env, PLUS, default_budget(j) if budget is None else budget)
    d = profile.first(j - z, above=True)
    u = z + profile.values(d)
    below = u < a1
    prev = np.concatenate(([False], below[:-1]))
    taus = np.flatnonzero(below & ~prev).tolist()
    Ts = np.flatnonzero(~below & prev).tolist()
    L = int(np.count_nonzero((u >= a0) & (u <= a1)))
    alpha = ladder_alpha(j)
    T_tilde = None
    if taus:
        above = np.flatnonzero(u[taus[0]:] >= a2)
        T_tilde = taus[0] + int(above[0]) if len(above) else None
    event = bool(
        alpha is not None and alpha >= 1 and len(taus) >= alpha and T_tilde is not None
        and taus[alpha - 1] < T_tilde < d and u.min() > a0
    )
    return LadderDecomposition(float(j), int(ell), (a0, a1, a2), taus, Ts, alpha, L,
                               T_tilde, d, float(u.min()), event)


# -- the minus-side geometry ------------------------------------------------------------

@dataclass
class ThetaReport:
    j: float
    times: dict           # |d-(j/3)|, |d-(-j/12)|, |d-(-3j)|, T_bar, |d-(j)|, T_tilde, |d-(-gamma j)|
    theta: bool
    F3: bool
    F4: bool
    F5: bool
    quantities: dict

    @property
    def all_events(self) -> bool:
        return self.theta and self.F3 and self.F4 and self.F5


def theta_minus(env: Environment, j: float, C5: float = DEFAULT_C5,
                budget: int | None = None) -> ThetaReport:
    """Ordering event of the left profile plus the F3-, F4-, F5- fluctuation events.

    Levels below zero are first entries from above: ``|d-(s)|`` for ``s < 0``
    is the first ``i`` with ``V(-i) <= s``.
    """
    if j <= 0:
        raise DomainError(f"need j > 0, got {j}")
    p = HalfLine(env, MINUS, default_budget(j) if budget is None else budget)
    t = {}
    t["d(j/3)"] = p.first(j / 3, above=True)
    t["d(-j/12)"] = p.first(-j / 12, above=False)
    t["d(-3j)"] = p.first(-3 * j, above=False)
    t["T_bar"] = p.first(-BETA * j, above=True, start=t["d(-3j)"])
    t["d(j)"] = p.first(j, above=True)
    t["T_tilde"] = p.first(-3 * j, above=False, start=t["T_bar"])
    t["d(-gamma j)"] = p.first(-GAMMA * j, above=False)
    order = ["d(j/3)", "d(-j/12)", "T_bar", "d(j)", "T_tilde", "d(-gamma j)"]
    theta = all(t[a] < t[b] for a, b in zip(order, order[1:]))
    w = p.values(max(t.values()))
    q = {"F3_rise": max_rise(w[t["d(j/3)"]:t["d(-3j)"] + 1]) if t["d(j/3)"] <= t["d(-3j)"] else None}
    F3 = q["F3_rise"] is not None and q["F3_rise"] <= j / 12
    if t["T_bar"] <= t["d(j)"]:
        q["F4_drop"] = max_drop(w[t["T_bar"]:t["d(j)"] + 1])
        F4 = j / 3 <= q["F4_drop"] <= j
    else:
        q["F4_drop"] = None
        F4 = False
    seg = w[t["d(-3j)"]:t["T_bar"] + 1]
    q["b_hat"] = t["d(-3j)"] + int(np.argmin(seg))
    q["F5_mass"] = float(np.exp(-(seg - seg.min())).sum())
    F5 = q["F5_mass"] <= C5
    return ThetaReport(float(j), t, theta, F3, F4, F5, q)


# -- export -------------------------------------------------------------------------------

def reports_json(reports: Iterable[EventReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)


def profile_rows(env: Environment, lo: int, hi: int,
                 reports: Iterable[EventReport] = ()) -> list[tuple[int, float, str]]:
    """``(x, V(x), marks)`` rows; marks like ``"b+(10);d-(10)"`` tag valley sites."""
    tags: dict[int, list[str]] = {}
    for r in reports:
        for m, sym in ((r.plus, "+"), (r.minus, "-")):
            if m is not None:
                tags.setdefault(m.b, []).append(f"b{sym}({r.j:g})")
                tags.setdefault(m.d, []).append(f"d{sym}({r.j:g})")
    V = env.potential_range(lo, hi)
    return [(x, float(v), ";".join(tags.get(x, []))) for x, v in zip(range(lo, hi + 1), V)]


# -- constructed environments --------------------------------------------------------------

def planted_potential(j: float, M: float, wall: int = 20) -> tuple[np.ndarray, int]:
    """Lattice potential (steps of ``+-M``) on which all nine events hold at level ``j``.

    Left of 0 the profile climbs to ``j/3``, falls straight to ``-3j``, climbs,
    dips by at least ``j/3``, and climbs past ``j``. Right of 0 it falls to about
    ``-1.5j`` and climbs past ``j``. Both ends get ``wall`` extra rising steps.
    Returns ``(values, first_site)`` for :meth:`Environment.from_potential`.
    """
    if not 0 < M < 2 * j / 3:
        raise DomainError("need 0 < M < 2j/3 for the construction")

    def units(level: float) -> int:
        return int(math.ceil(level / M - 1e-12))

    peak, depth, dip, top = units(j / 3), units(3 * j), units(j / 3), units(j)
    if dip * M > j:
        raise DomainError("dip does not fit below j")
    bottom = -depth
    left = list(range(0, peak + 1)) + list(range(peak - 1, bottom - 1, -1))
    left += list(range(bottom + 1, bottom + dip + 4))
    left += list(range(left[-1] - 1, left[-1] - dip - 1, -1))
    left += list(range(left[-1] + 1, top + wall + 1))
    vb = min(max(round(1.5 * j / M), units(j)), int(math.floor(2 * j / M)))
    right = list(range(0, -vb - 1, -1)) + list(range(-vb + 1, top + wall + 1))
    values = np.array(left[::-1][:-1] + right, dtype=np.float64) * M
    return values, -(len(left) - 1)


def planted_environment(j: float, law=None, wall: int = 20) -> Environment:
    from .environment import DEFAULT_LAW

    law = DEFAULT_LAW if law is None else law
    values, first = planted_potential(j, law.M, wall)
    return Environment.from_potential(values, first, law=law)
