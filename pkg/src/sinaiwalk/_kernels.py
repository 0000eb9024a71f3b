"""Compiled walk loops.

Positions are window indices. ``thr[i]`` is ``floor(omega * 2**32)`` for the
site at index ``i``; the walk steps right when the step's 32 random bits are
below it. A reflecting edge is encoded as ``2**32`` (always right) or ``0``
(always left). Step ``t`` of a stream keyed ``k`` uses half of
``word(k, t >> 1)``: the low half for even ``t``, the high half for odd ``t``.
"""

from __future__ import annotations

import numba as nb
import numpy as np

from .rng import high32, low32, sub_key, word

# indices into the ``meta`` state vector of ``advance``
P, T, FAVMAX, FAVLEN, NONPOS, POS, ZERO, SEGMAX, SEGMIN = range(9)

HIT, TIME_UP, EDGE = 0, 1, 2


@nb.njit(nogil=True, cache=True)
def advance(thr, counts, fav, meta, key, t_end, stop_mask):
    """Run one walk until a stop site, ``t_end``, or a window edge.

    Updates local times, the favorite set (``fav[:meta[FAVLEN]]`` holds the
    argmax indices) and the sign tallies in place.
    """
    n = thr.shape[0]
    p = meta[P]
    t = np.uint64(meta[T])
    end = np.uint64(t_end)
    favmax = meta[FAVMAX]
    favlen = meta[FAVLEN]
    nonpos = meta[NONPOS]
    pos = meta[POS]
    zero = meta[ZERO]
    segmax = meta[SEGMAX]
    segmin = meta[SEGMIN]
    code = TIME_UP
    if p == 0 or p == n - 1:
        code = EDGE
        end = t
    z = word(key, t >> np.uint64(1))
    while t < end:
        if (t & np.uint64(1)) == 0:
            z = word(key, t >> np.uint64(1))
            bits = low32(z)
        else:
            bits = high32(z)
        if bits < thr[p]:
            p += 1
        else:
            p -= 1
        t += np.uint64(1)
        c = counts[p] + 1
        counts[p] = c
        if c > favmax:
            favmax = c
            fav[0] = p
            favlen = 1
        elif c == favmax:
            fav[favlen] = p
            favlen += 1
        if p > zero:
            pos += 1
        else:
            nonpos += 1
        if p > segmax:
            segmax = p
        if p < segmin:
            segmin = p
        if stop_mask[p]:
            code = HIT
            break
        if p == 0 or p == n - 1:
            code = EDGE
            break
    meta[P] = p
    meta[T] = np.int64(t)
    meta[FAVMAX] = favmax
    meta[FAVLEN] = favlen
    meta[NONPOS] = nonpos
    meta[POS] = pos
    meta[SEGMAX] = segmax
    meta[SEGMIN] = segmin
    return code


@nb.njit(nogil=True, cache=True)
def exit_batch(thr, start, r, s, key, n_rep):
    """Number of ``n_rep`` walks from ``start`` that reach ``r`` before ``s``."""
    left = 0
    for i in range(n_rep):
        k = sub_key(key, i)
        p = start
        t = np.uint64(0)
        while True:
            z = word(k, t)
            t += np.uint64(1)
            p += 1 if low32(z) < thr[p] else -1
            if p == r or p == s:
                break
            p += 1 if high32(z) < thr[p] else -1
            if p == r or p == s:
                break
        if p == r:
            left += 1
    return left


@nb.njit(nogil=True, cache=True)
def exit_batch_lanes(thr, start, r, s, key, n_rep):
    """Same count as ``exit_batch`` with 8 walks advanced in lockstep.

    Walk ``i`` still uses stream ``sub_key(key, i)`` word by word, so each
    walk's path is unchanged; interleaving only lets independent walks
    overlap in the pipeline.
    """
    L = 8
    ps = np.empty(L, dtype=np.int64)
    ts = np.zeros(L, dtype=np.uint64)
    ks = np.zeros(L, dtype=np.uint64)
    act = np.zeros(L, dtype=np.bool_)
    nxt = 0
    live = 0
    for l in range(L):
        if nxt < n_rep:
            ks[l] = sub_key(key, nxt)
            ps[l] = start
            act[l] = True
            nxt += 1
            live += 1
    left = 0
    one = np.uint64(1)
    while live > 0:
        for l in range(L):
            if not act[l]:
                continue
            p = ps[l]
            z = word(ks[l], ts[l])
            ts[l] += one
            p += 1 if low32(z) < thr[p] else -1
            if p != r and p != s:
                p += 1 if high32(z) < thr[p] else -1
            if p == r or p == s:
                if p == r:
                    left += 1
                if nxt < n_rep:
                    ks[l] = sub_key(key, nxt)
                    ts[l] = 0
                    p = start
                    nxt += 1
                else:
                    act[l] = False
                    live -= 1
            ps[l] = p
    return left


@nb.njit(nogil=True, cache=True)
def block_table(thr_top, width, k, r, s):
    """Position after ``k`` narrow steps from every start and every ``k*width``-bit block.

    A step from ``p`` with chunk ``c`` (the next ``width`` bits, low end
    first) goes right iff ``c < thr_top[p]``; ``r`` and ``s`` absorb.
    """
    n = thr_top.shape[0]
    mask = (1 << width) - 1
    tab = np.empty((n, 1 << (width * k)), dtype=np.int16)
    for p0 in range(n):
        for b in range(tab.shape[1]):
            p = p0
            if p0 != r and p0 != s:
                bb = b
                for _ in range(k):
                    p += 1 if (bb & mask) < thr_top[p] else -1
                    if p == r or p == s:
                        break
                    bb >>= width
            tab[p0, b] = p
    return tab


@nb.njit(nogil=True, cache=True)
def exit_batch_table(tab, block_bits, start, r, s, key, n_rep):
    """``exit_batch`` driven by a :func:`block_table`, one lookup per block of steps.

    Word ``t`` of walk ``i`` (stream ``sub_key(key, i)``) supplies
    ``64 // block_bits`` blocks from its low end; leftover high bits go unused.
    """
    per = 64 // block_bits
    mask = np.uint64((1 << block_bits) - 1)
    shift = np.uint64(block_bits)
    left = 0
    for i in range(n_rep):
        k = sub_key(key, i)
        p = start
        t = np.uint64(0)
        done = False
        while not done:
            z = word(k, t)
            t += np.uint64(1)
            for _ in range(per):
                p = tab[p, z & mask]
                if p == r or p == s:
                    done = True
                    break
                z >>= shift
        if p == r:
            left += 1
    return left


@nb.njit(nogil=True, cache=True)
def visits_batch(thr, start, stop, site, key, n_rep, max_steps):
    """Visits to ``site`` at times ``0..tau(stop)`` for ``n_rep`` walks from ``start``.

    ``tau(stop)`` is the first time ``>= 1`` at ``stop``. A walk still running
    after ``max_steps`` reports ``-1``. The window must reflect at its edges.
    """
    out = np.empty(n_rep, dtype=np.int64)
    cap = np.uint64(max_steps)
    for i in range(n_rep):
        k = sub_key(key, i)
        p = start
        c = 1 if p == site else 0
        t = np.uint64(0)
        z = np.uint64(0)
        done = False
        while t < cap:
            if (t & np.uint64(1)) == 0:
                z = word(k, t >> np.uint64(1))
                bits = low32(z)
            else:
                bits = high32(z)
            p += 1 if bits < thr[p] else -1
            t += np.uint64(1)
            if p == site:
                c += 1
            if p == stop:
                done = True
                break
        out[i] = c if done else -1
    return out


@nb.njit(nogil=True, cache=True)
def hit_within_batch(thr, start, target, max_steps, key, n_rep):
    """Number of walks from ``start`` hitting ``target`` at some time in ``1..max_steps``."""
    hits = 0
    cap = np.uint64(max_steps)
    for i in range(n_rep):
        k = sub_key(key, i)
        p = start
        t = np.uint64(0)
        z = np.uint64(0)
        while t < cap:
            if (t & np.uint64(1)) == 0:
                z = word(k, t >> np.uint64(1))
                bits = low32(z)
            else:
                bits = high32(z)
            p += 1 if bits < thr[p] else -1
            t += np.uint64(1)
            if p == target:
                hits += 1
                break
    return hits


@nb.njit(nogil=True, cache=True)
def trajectory(thr, start, key, t0, n_steps, out):
    """Fill ``out`` with positions at times ``t0+1 .. t0+n_steps``.

    Returns the number of positions written; stops early on a window edge
    (``out`` then ends at the edge index).
    """
    n = thr.shape[0]
    p = start
    t = np.uint64(t0)
    z = word(key, t >> np.uint64(1))
    for i in range(n_steps):
        if p == 0 or p == n - 1:
            if thr[p] != 0 and thr[p] != np.uint64(4294967296):
                return i
        if (t & np.uint64(1)) == 0:
            z = word(key, t >> np.uint64(1))
            bits = low32(z)
        else:
            bits = high32(z)
        p += 1 if bits < thr[p] else -1
        t += np.uint64(1)
        out[i] = p
    return n_steps
