"""Quenched walk simulation, local times and favorite sites."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from . import _kernels as K
from .environment import Environment
from .errors import BudgetError, DomainError
from .rng import TWO32, derive_key, step_bits

DEFAULT_CAP = 10 ** 8
_PAD = 256


def thresholds(omega: np.ndarray) -> np.ndarray:
    """``floor(omega * 2**32)`` as used by the compiled kernels.

    Undefined transition probabilities (the outermost site of a fixture) map
    to 0; the walk never steps from such a site.
    """
    omega = np.nan_to_num(np.asarray(omega, dtype=np.float64), nan=0.0)
    return np.floor(omega * TWO32).astype(np.uint64)


@dataclass(frozen=True)
class WalkState:
    position: int = 0
    time: int = 0
    key: int = 0

    @classmethod
    def start(cls, seed: int, *tags: object, position: int = 0) -> "WalkState":
        """Fresh walk whose stream is keyed by ``(seed, "walk", *tags)``."""
        return cls(position=position, time=0, key=derive_key(seed, "walk", *tags))


def step(state: WalkState, env: Environment) -> WalkState:
    """One transition: right with probability ``omega_position``."""
    thr = int(np.floor(env.site(state.position) * TWO32))
    move = 1 if step_bits(state.key, state.time) < thr else -1
    return replace(state, position=state.position + move, time=state.time + 1)


@dataclass(frozen=True)
class StopSpec:
    targets: frozenset = frozenset()
    cap: int | None = DEFAULT_CAP

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", frozenset(int(t) for t in self.targets))
        if not self.targets and self.cap is None:
            raise DomainError("a stop spec needs targets or a finite cap")


@dataclass(frozen=True)
class Outcome:
    kind: str                  # "hit" or "capped"
    time: int
    site: int | None = None
    max_position: int | None = None
    min_position: int | None = None

    @property
    def hit(self) -> bool:
        return self.kind == "hit"


class LocalTimeLedger:
    """Occupation counts ``xi(n, x)`` for ``i = 0..n`` with an incremental favorite set.

    Counts live in a dense array over the visited window; :attr:`counts`
    gives the sparse view. The favorite set is maintained with the
    "reset on new maximum, append on tie" rule.
    """

    def __init__(self, start: int = 0):
        self._base = start - _PAD
        self._counts = np.zeros(2 * _PAD + 1, dtype=np.int64)
        self._fav = np.zeros(2 * _PAD + 1, dtype=np.int64)
        self._counts[start - self._base] = 1
        self._fav[0] = start - self._base
        self.favmax = 1
        self.favlen = 1
        self.n = 0
        self.nonpositive = 1 if start <= 0 else 0
        self.positive = 1 - self.nonpositive

    @classmethod
    def from_trajectory(cls, path: Iterable[int]) -> "LocalTimeLedger":
        it = iter(path)
        ledger = cls(int(next(it)))
        for x in it:
            ledger.record(int(x))
        return ledger

    # -- window ---------------------------------------------------------------

    @property
    def window(self) -> tuple[int, int]:
        return self._base, self._base + len(self._counts) - 1

    def _ensure(self, lo: int, hi: int) -> None:
        w_lo, w_hi = self.window
        if w_lo <= lo and hi <= w_hi:
            return
        width = len(self._counts)
        new_lo = min(lo - _PAD, w_lo - width) if lo <= w_lo else w_lo
        new_hi = max(hi + _PAD, w_hi + width) if hi >= w_hi else w_hi
        shift = w_lo - new_lo
        counts = np.zeros(new_hi - new_lo + 1, dtype=np.int64)
        counts[shift:shift + width] = self._counts
        fav = np.zeros(len(counts), dtype=np.int64)
        fav[:self.favlen] = self._fav[:self.favlen] + shift
        self._base, self._counts, self._fav = new_lo, counts, fav

    # -- updates --------------------------------------------------------------

    def record(self, x: int) -> None:
        """Append one visit at time ``n + 1``."""
        self._ensure(x - 1, x + 1)
        i = x - self._base
        c = self._counts[i] + 1
        self._counts[i] = c
        if c > self.favmax:
            self.favmax, self.favlen = c, 1
            self._fav[0] = i
        elif c == self.favmax:
            self._fav[self.favlen] = i
            self.favlen += 1
        self.n += 1
        if x > 0:
            self.positive += 1
        else:
            self.nonpositive += 1

    # -- queries ----------------------------------------------------------------

    def count(self, x: int) -> int:
        lo, hi = self.window
        return int(self._counts[x - lo]) if lo <= x <= hi else 0

    @property
    def counts(self) -> dict[int, int]:
        nz = np.flatnonzero(self._counts)
        return {int(i) + self._base: int(self._counts[i]) for i in nz}

    def dense(self, lo: int, hi: int) -> np.ndarray:
        """Counts for sites ``lo..hi`` (zeros outside the window)."""
        out = np.zeros(hi - lo + 1, dtype=np.int64)
        w_lo, w_hi = self.window
        a, b = max(lo, w_lo), min(hi, w_hi)
        if a <= b:
            out[a - lo:b - lo + 1] = self._counts[a - w_lo:b - w_lo + 1]
        return out

    @property
    def occupied_range(self) -> tuple[int, int]:
        nz = np.flatnonzero(self._counts)
        return int(nz[0]) + self._base, int(nz[-1]) + self._base

    @property
    def mass(self) -> int:
        return int(self._counts.sum())

    @property
    def A_minus(self) -> int:
        """``#{0 <= i <= n : X_i <= 0}``."""
        return self.nonpositive

    def favorites(self) -> set[int]:
        return {int(i) + self._base for i in self._fav[:self.favlen]}

    def favorites_recomputed(self) -> set[int]:
        m = self._counts.max()
        return {int(i) + self._base for i in np.flatnonzero(self._counts == m)}

    def rows(self) -> list[tuple[int, int]]:
        return sorted(self.counts.items())


def favorite_set(ledger: LocalTimeLedger) -> set[int]:
    """Sites with maximal local time; never empty."""
    return ledger.favorites()


def positivity_fraction(ledger: LocalTimeLedger) -> float:
    """``#{0 <= i <= n : X_i > 0} / n``."""
    if ledger.n < 1:
        raise DomainError("positivity fraction needs at least one step")
    return ledger.positive / ledger.n


def run_until(state: WalkState, env: Environment, spec: StopSpec,
              ledger: LocalTimeLedger) -> tuple[Outcome, WalkState]:
    """Advance until a target is hit at some time ``>= 1`` or ``spec.cap`` steps elapse.

    The ledger must already hold the history up to ``state.time`` (a fresh
    ledger started at ``state.position`` for a fresh walk).
    """
    if ledger.n != state.time:
        raise DomainError("ledger and walk state disagree on the current time")
    cap = DEFAULT_CAP if spec.cap is None else int(spec.cap)
    t_end = state.time + cap
    pos = state.position
    meta = np.zeros(9, dtype=np.int64)
    seg_max = seg_min = pos
    targets = sorted(spec.targets)
    while True:
        lo, hi = ledger.window
        if targets:
            ledger._ensure(min(targets[0], pos), max(targets[-1], pos))
            lo, hi = ledger.window
        if env.fixed:
            f_lo, f_hi = env.realized
            lo, hi = max(lo, f_lo), min(hi, f_hi)
        thr = thresholds(env.omega_range(lo, hi))
        counts = ledger._counts[lo - ledger._base:hi - ledger._base + 1]
        mask = np.zeros(hi - lo + 1, dtype=np.uint8)
        for x in targets:
            if lo <= x <= hi:
                mask[x - lo] = 1
        off = lo - ledger._base
        fav_local = ledger._fav[:len(counts)].copy()
        fav_local[:ledger.favlen] -= off
        meta[:] = (pos - lo, ledger.n,
                   ledger.favmax, ledger.favlen, ledger.nonpositive, ledger.positive, -lo,
                   seg_max - lo, seg_min - lo)
        code = K.advance(thr, counts, fav_local, meta, np.uint64(state.key), t_end, mask)
        ledger.favmax, ledger.favlen = int(meta[K.FAVMAX]), int(meta[K.FAVLEN])
        ledger._fav[:ledger.favlen] = fav_local[:ledger.favlen] + off
        ledger.nonpositive, ledger.positive = int(meta[K.NONPOS]), int(meta[K.POS])
        ledger.n = int(meta[K.T])
        pos = int(meta[K.P]) + lo
        seg_max, seg_min = int(meta[K.SEGMAX]) + lo, int(meta[K.SEGMIN]) + lo
        if code != K.EDGE:
            break
        if env.fixed and (pos == env.realized[0] or pos == env.realized[1]):
            raise BudgetError(f"walk reached the fixture edge at site {pos}")
        ledger._ensure(pos - 1, pos + 1)
    new_state = replace(state, position=pos, time=ledger.n)
    kind = "hit" if code == K.HIT else "capped"
    return Outcome(kind, ledger.n, pos if kind == "hit" else None, seg_max, seg_min), new_state


# -- batch Monte Carlo over independent walks in a frozen environment ---------------

def _box(env: Environment, lo: int, hi: int, reflect: bool = True) -> np.ndarray:
    thr = thresholds(env.omega_range(lo, hi))
    if reflect:
        thr[0] = TWO32
        thr[-1] = 0
    return thr


def step_width(thr: np.ndarray) -> int:
    """Fewest leading bits of a 32-bit chunk that decide every ``bits < thr`` exactly.

    With ``thr`` a multiple of ``2**(32 - w)``, ``bits < thr`` iff the top
    ``w`` bits are below ``thr >> (32 - w)``; a ``w``-bit chunk then drives
    a step with the same law.
    """
    thr = np.asarray(thr, dtype=np.uint64)
    for width in range(1, 33):
        if not np.any(thr % (np.uint64(1) << np.uint64(32 - width))):
            return width
    return 32


TABLE_BITS = 12


def exit_frequency(env: Environment, r: int, x: int, s: int, n: int, key: int) -> int:
    """Count of ``n`` walks from ``x`` that hit ``r`` before ``s``.

    Laws whose thresholds need at most 4 bits (the two-point law needs 2) run
    through a block lookup table; others use 32-bit chunks.
    """
    if not r < x < s:
        raise DomainError(f"need r < x < s, got {r}, {x}, {s}")
    thr = _box(env, r, s, reflect=False)
    width = step_width(thr[1:-1])
    if width <= 4:
        k = TABLE_BITS // width
        top = (thr >> np.uint64(32 - width)).astype(np.int64)
        tab = K.block_table(top, width, k, 0, s - r)
        return int(K.exit_batch_table(tab, width * k, x - r, 0, s - r, np.uint64(key), n))
    return int(K.exit_batch_lanes(thr, x - r, 0, s - r, np.uint64(key), n))


def visit_counts(env: Environment, start: int, stop: int, site: int, n: int, key: int,
                 box: tuple[int, int] | None = None, max_steps: int = DEFAULT_CAP) -> np.ndarray:
    """Samples of ``xi(tau(stop), site)`` for walks from ``start``.

    The walk runs in ``box`` with reflecting ends. Choose the box so that it
    covers ``start``, ``stop`` and ``site`` with at least one spare site
    beyond any of them other than ``stop``; by recurrence the reflection then
    leaves the law of the visit count unchanged. Capped walks give ``-1``.
    """
    if box is None:
        lo, hi = min(start, stop, site) - 3, max(start, stop, site) + 3
    else:
        lo, hi = box
    thr = _box(env, lo, hi)
    return K.visits_batch(thr, start - lo, stop - lo, site - lo, np.uint64(key), n, max_steps)


def hit_frequency(env: Environment, start: int, target: int, ell: int, n: int, key: int) -> int:
    """Count of ``n`` walks from ``start`` with ``tau(target) < ell``."""
    lo, hi = start - ell - 1, start + ell + 1
    thr = _box(env, lo, hi)
    return int(K.hit_within_batch(thr, start - lo, target - lo, ell - 1, np.uint64(key), n))


def trajectory(env: Environment, start: int, n_steps: int, key: int,
               box: tuple[int, int] | None = None) -> np.ndarray:
    """Positions ``X_0..X_n`` of one walk (reflecting at ``box`` if given)."""
    if box is None:
        lo, hi = start - n_steps - 1, start + n_steps + 1
        thr = _box(env, lo, hi, reflect=False)
    else:
        lo, hi = box
        thr = _box(env, lo, hi)
    out = np.empty(n_steps, dtype=np.int64)
    m = K.trajectory(thr, start - lo, np.uint64(key), 0, n_steps, out)
    return np.concatenate(([start], out[:m] + lo))
