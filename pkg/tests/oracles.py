"""Independent reference implementations used only by the tests.

They follow the definitions literally (explicit loops, all pairs) and share
no code with the package beyond reading potential values.
"""

from __future__ import annotations

import math

import numpy as np

PAIR_LIMIT = 20000   # above this the all-pairs scan switches to suffix extrema


def pairs_max(values, later_minus_earlier: bool) -> float:
    """``max_{x <= y} v[y] - v[x]`` (or ``v[x] - v[y]``) over all pairs."""
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    if n > PAIR_LIMIT:
        # suffix form: for each x the best partner y >= x
        if later_minus_earlier:
            suf = np.maximum.accumulate(v[::-1])[::-1]
            return float((suf - v).max())
        suf = np.minimum.accumulate(v[::-1])[::-1]
        return float((v - suf).max())
    best = -math.inf
    block = max(1, 4_000_000 // max(n, 1))
    for start in range(0, n, block):
        xs = np.arange(start, min(n, start + block))
        diff = v[None, :] - v[xs, None] if later_minus_earlier else v[xs, None] - v[None, :]
        mask = np.arange(n)[None, :] >= xs[:, None]
        best = max(best, float(np.where(mask, diff, -np.inf).max()))
    return best


def marks_plus(V_right: np.ndarray, j: float):
    """``(d, b)`` on the right half-line from values ``V(0), V(1), ...``."""
    d = None
    for n, v in enumerate(V_right):
        if v >= j:
            d = n
            break
    if d is None:
        return None
    b, best = 0, V_right[0]
    for n in range(d + 1):
        if V_right[n] < best:
            b, best = n, V_right[n]
    return d, b


def marks_minus(V_left_to_0: np.ndarray, lo: int, j: float):
    """``(d, b)`` on the left half-line; ``V_left_to_0[i]`` is ``V(lo + i)``, ending at ``V(0)``."""
    d = None
    for x in range(0, lo - 1, -1):
        if V_left_to_0[x - lo] >= j:
            d = x
            break
    if d is None:
        return None
    b, best = 0, V_left_to_0[-lo]
    for x in range(0, d - 1, -1):
        if V_left_to_0[x - lo] < best:
            b, best = x, V_left_to_0[x - lo]
    return d, b


def events(env, j: float, C4: float, C5: float, reach: int):
    """All nine flags straight from their definitions (``None`` for a side not found within ``reach``)."""
    out = {}
    right = env.potential_range(0, reach)
    mp = marks_plus(right, j)
    if mp is not None:
        d, b = mp
        V = right[:d + 1]
        out["E1+"] = -2 * j <= V[b] <= -j
        out["E2+"] = pairs_max(V[:b + 1], True) <= j / 4
        out["E3+"] = pairs_max(V[b:d + 1], False) <= j
        out["E4+"] = sum(math.exp(-(v - V[b])) for v in V) >= C4 * math.log(math.log(j))
        out["marks+"] = (d, b)
    left = env.potential_range(-reach, 0)
    mm = marks_minus(left, -reach, j)
    if mm is not None:
        d, b = mm
        seg = left[d + reach:]            # V(d..0)
        ib = b - d                          # index of b within seg
        out["E1-"] = seg[ib] <= -3 * j
        out["E2-"] = max(seg[ib:]) >= j / 3
        out["E3-"] = pairs_max(seg[ib:], False) <= j / 2
        rise = pairs_max(seg[:ib + 1], True)
        out["E4-"] = j / 3 <= rise <= j
        out["E5-"] = sum(math.exp(-(v - seg[ib])) for v in seg) <= 1 + C5
        out["marks-"] = (d, b)
    return out


def concentration_exhaustive(counts: np.ndarray, n: int, a: float) -> int:
    """Smallest radius over every centre (occupied or not) by growing windows one step at a time."""
    c = np.asarray(counts, dtype=np.int64)
    W = len(c)
    pad = np.concatenate((np.zeros(W, np.int64), c, np.zeros(W, np.int64)))
    centres = np.arange(len(pad))
    sums = pad.copy()
    k = 0
    while True:
        if sums.max() >= a * n:
            return k
        k += 1
        lo, hi = centres - k, centres + k
        sums = sums + np.where(lo >= 0, pad[np.clip(lo, 0, None)], 0) \
            + np.where(hi < len(pad), pad[np.clip(hi, None, len(pad) - 1)], 0)


def ledger_from_path(path):
    """Counts dictionary of a trajectory, including time 0."""
    out: dict[int, int] = {}
    for x in path:
        out[int(x)] = out.get(int(x), 0) + 1
    return out
