"""Excursion decomposition of trajectories at an anchor site, and the
geometric-law check for visit counts before a rival hitting time."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DomainError

KS_CRIT_5PCT = 1.358      # asymptotic Kolmogorov quantile at level 0.05
MIN_GEOMETRIC_SAMPLES = 100


@dataclass
class ExcursionRecord:
    """Excursions away from ``anchor``, with visit profiles on ``[lo, hi]``.

    ``boundaries[0]`` is the first visit to the anchor (``T_0``) and each
    later entry a return. Excursion ``j >= 1`` covers times ``(T_{j-1}, T_j]``.
    ``pre_visits`` counts times ``0..T_0`` and ``tail_visits`` the unfinished
    excursion after the last boundary.
    """

    anchor: int
    lo: int
    hi: int
    boundaries: list[int]
    Z: np.ndarray
    pre_visits: np.ndarray
    tail_visits: np.ndarray
    profile_sum: np.ndarray
    profile_sumsq: np.ndarray
    profiles: list[dict[int, int]] | None
    final_time: int
    rival_time: int | None

    @property
    def n_excursions(self) -> int:
        return len(self.Z)

    def Y(self, j: int) -> dict[int, int]:
        """Visit profile of excursion ``j`` (1-based), sparse."""
        if self.profiles is None:
            raise DomainError("profiles were not kept")
        return self.profiles[j - 1]

    def total_visits(self) -> np.ndarray:
        """``xi(final, x)`` for ``x`` in range, rebuilt from the pieces."""
        return self.pre_visits + self.profile_sum.astype(np.int64) + self.tail_visits

    def mean_profile(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-site mean and (population) variance of ``Y_j(x)`` over excursions."""
        n = self.n_excursions
        if n == 0:
            nan = np.full(self.hi - self.lo + 1, np.nan)
            return nan, nan
        mean = self.profile_sum / n
        return mean, np.maximum(self.profile_sumsq / n - mean ** 2, 0.0)

    def summary_rows(self) -> list[tuple[int, int]]:
        return [(j + 1, int(z)) for j, z in enumerate(self.Z)]

    def profile_rows(self) -> list[tuple[int, float, float]]:
        mean, var = self.mean_profile()
        return [(self.lo + i, float(m), float(v)) for i, (m, v) in enumerate(zip(mean, var))]


@dataclass(frozen=True)
class PreHitCount:
    """Completed anchor excursions before the rival time.

    ``M`` is the number of returns ``T_j`` (``j >= 1``) before the rival,
    and ``anchor_hit`` records whether ``T_0`` itself came first.
    """

    M: int
    anchor_hit: bool


class ExcursionDecomposer:
    """Streaming splitter: feed positions ``X_0, X_1, ...`` in chunks, then ``finish``.

    Output does not depend on how the stream is chunked.
    """

    def __init__(self, anchor: int, site_range: tuple[int, int], rival: int | None = None,
                 keep_profiles: bool = True):
        lo, hi = int(site_range[0]), int(site_range[1])
        if hi < lo:
            raise DomainError(f"empty range [{lo}, {hi}]")
        if rival is not None and rival == anchor:
            raise DomainError("anchor and rival must differ")
        self.anchor, self.lo, self.hi, self.rival = int(anchor), lo, hi, rival
        self.keep_profiles = keep_profiles
        W = hi - lo + 1
        self._W = W
        self._t = 0
        self._T: list[int] = []
        self._Z: list[int] = []
        self._profiles: list[dict[int, int]] | None = [] if keep_profiles else None
        self._pre = np.zeros(W, dtype=np.int64)
        self._open = np.zeros(W, dtype=np.int64)
        self._sum = np.zeros(W)
        self._sq = np.zeros(W)
        self.rival_time: int | None = None

    @property
    def stopped(self) -> bool:
        return self.rival_time is not None

    def _bins(self, offsets: np.ndarray) -> np.ndarray:
        return np.bincount(offsets, minlength=self._W).astype(np.int64)

    def _complete(self, row: np.ndarray) -> None:
        self._Z.append(int(row.sum()))
        self._sum += row
        self._sq += row.astype(np.float64) ** 2
        if self._profiles is not None:
            nz = np.flatnonzero(row)
            self._profiles.append({self.lo + int(i): int(row[i]) for i in nz})

    def feed(self, positions: Iterable[int]) -> None:
        if self.stopped:
            return
        xs = np.asarray(positions, dtype=np.int64).ravel()
        if self.rival is not None:
            hit = np.flatnonzero(xs == self.rival)
            if len(hit):
                xs = xs[:hit[0] + 1]
                self.rival_time = self._t + int(hit[0])
        t0 = self._t
        self._t += len(xs)
        anchors = np.flatnonzero(xs == self.anchor)
        start = 0
        if not self._T:
            if not len(anchors):
                inr = (xs >= self.lo) & (xs <= self.hi)
                self._pre += self._bins(xs[inr] - self.lo)
                return
            a0 = int(anchors[0])
            head = xs[:a0 + 1]
            inr = (head >= self.lo) & (head <= self.hi)
            self._pre += self._bins(head[inr] - self.lo)
            self._T.append(t0 + a0)
            anchors = anchors[1:]
            start = a0 + 1
        body = xs[start:]
        ends = anchors - start
        self._T.extend((t0 + anchors).tolist())
        idx = np.arange(len(body))
        inr = (body >= self.lo) & (body <= self.hi)
        eid = np.searchsorted(ends, idx[inr], side="left")
        off = body[inr] - self.lo
        c = len(ends)
        if c == 0:
            self._open += self._bins(off)
            return
        # excursion 0 continues the open one carried from the previous chunk
        self._complete(self._open + self._bins(off[eid == 0]))
        mid = (eid > 0) & (eid < c)
        if mid.any():
            key = eid[mid] * self._W + off[mid]
            uniq, cnt = np.unique(key, return_counts=True)
            e_of, x_of = uniq // self._W, uniq % self._W
            zs = np.bincount(e_of, weights=cnt, minlength=c)[1:c]
            self._sum += np.bincount(x_of, weights=cnt, minlength=self._W)
            self._sq += np.bincount(x_of, weights=cnt.astype(np.float64) ** 2, minlength=self._W)
            self._Z.extend(int(z) for z in zs)
            if self._profiles is not None:
                groups = np.split(np.arange(len(uniq)), np.flatnonzero(np.diff(e_of)) + 1)
                by_e = {int(e_of[g[0]]): g for g in groups}
                for e in range(1, c):
                    g = by_e.get(e)
                    self._profiles.append({} if g is None else
                                          {self.lo + int(x_of[i]): int(cnt[i]) for i in g})
        else:
            self._Z.extend([0] * (c - 1))
            if self._profiles is not None:
                self._profiles.extend({} for _ in range(c - 1))
        self._open = self._bins(off[eid == c])

    def finish(self) -> tuple[ExcursionRecord, PreHitCount]:
        record = ExcursionRecord(
            self.anchor, self.lo, self.hi, list(self._T), np.asarray(self._Z, dtype=np.int64),
            self._pre.copy(), self._open.copy(), self._sum.copy(), self._sq.copy(),
            None if self._profiles is None else list(self._profiles),
            self._t - 1, self.rival_time,
        )
        return record, PreHitCount(max(len(self._T) - 1, 0), bool(self._T))


def decompose(trajectory: Iterable[int] | Iterable[np.ndarray], anchor: int,
              site_range: tuple[int, int], rival: int | None = None,
              keep_profiles: bool = True) -> tuple[ExcursionRecord, PreHitCount]:
    """Decompose a trajectory given as one array or as an iterable of chunks."""
    dec = ExcursionDecomposer(anchor, site_range, rival, keep_profiles)
    if isinstance(trajectory, np.ndarray) or (
            isinstance(trajectory, (list, tuple)) and trajectory and np.isscalar(trajectory[0])):
        dec.feed(trajectory)
    else:
        for chunk in trajectory:
            dec.feed(chunk)
    return dec.finish()


@dataclass(frozen=True)
class GeometricReport:
    n_total: int
    n_conditioned: int
    q_hat: float
    pi_exact: float
    pi_hat: float | None
    ks_distance: float | None
    ks_critical: float | None
    mean: float | None
    mean_se: float | None
    mean_ok: bool | None
    passed: bool | None       # None: insufficient data

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def geometric_cdf(k: np.ndarray, pi: float) -> np.ndarray:
    """``P(G <= k)`` for ``G`` geometric on ``{1, 2, ...}`` with success probability ``pi``."""
    k = np.asarray(k, dtype=np.float64)
    return np.where(k < 1, 0.0, -np.expm1(np.floor(k) * math.log1p(-pi)) if pi < 1 else 1.0)


def geometric_check(samples: np.ndarray, pi: float) -> GeometricReport:
    """Compare visit counts (zeros allowed, they give ``q_hat``) with Geometric(``pi``).

    The KS distance is taken over the conditioned sample (counts ``>= 1``)
    against the exact CDF, evaluated at the jump points of both. The
    conditioned mean must lie within 3 standard errors of ``1/pi``.
    """
    if not 0 < pi <= 1:
        raise DomainError(f"pi must lie in (0, 1], got {pi}")
    s = np.asarray(samples, dtype=np.int64)
    s = s[s >= 0]          # capped samples carry -1
    cond = np.sort(s[s >= 1])
    n, m = len(s), len(cond)
    q_hat = m / n if n else float("nan")
    if m < MIN_GEOMETRIC_SAMPLES:
        return GeometricReport(n, m, q_hat, pi, None, None, None, None, None, None, None)
    pts = np.unique(cond)
    F = geometric_cdf(pts, pi)
    upper = np.searchsorted(cond, pts, side="right") / m
    lower = np.searchsorted(cond, pts, side="left") / m
    F_before = geometric_cdf(pts - 1, pi)
    ks = float(max(np.abs(upper - F).max(), np.abs(lower - F_before).max()))
    crit = KS_CRIT_5PCT / math.sqrt(m)
    mean = float(cond.mean())
    se = float(cond.std(ddof=1) / math.sqrt(m))
    target_sd = math.sqrt(1 - pi) / pi
    # a degenerate sample (pi = 1) has zero spread; fall back to the model spread
    tol = 3 * max(se, target_sd / math.sqrt(m))
    mean_ok = abs(mean - 1 / pi) <= tol if tol > 0 else mean == 1 / pi
    return GeometricReport(n, m, q_hat, pi, 1 / mean, ks, crit, mean, se, bool(mean_ok),
                           bool(ks <= crit and mean_ok))
