from __future__ import annotations

import numpy as np
import pytest

from sinaiwalk import DEFAULT_LAW, Environment
from sinaiwalk import quenched as Q
from sinaiwalk import walk as W
from sinaiwalk.errors import DomainError
from sinaiwalk.excursions import ExcursionDecomposer, decompose, geometric_cdf, geometric_check
from sinaiwalk.rng import derive_key

PATH = [1, 0, 2, 0, 0, 1, 0, 3]


def test_hand_decomposition():
    rec, pre = decompose(PATH, 0, (0, 3))
    assert rec.boundaries == [1, 3, 4, 6]
    assert rec.Z.tolist() == [2, 1, 2]
    assert [rec.Y(i) for i in (1, 2, 3)] == [{0: 1, 2: 1}, {0: 1}, {0: 1, 1: 1}]
    assert rec.pre_visits.tolist() == [1, 1, 0, 0]
    assert rec.tail_visits.tolist() == [0, 0, 0, 1]
    assert pre.M == 3 and pre.anchor_hit
    assert rec.summary_rows() == [(1, 2), (2, 1), (3, 2)]


def test_rival_cuts_the_stream():
    _, pre = decompose(PATH, 0, (0, 3), rival=3)
    assert pre.M == 3
    rec, pre = decompose(PATH, 0, (0, 3), rival=2)
    assert rec.boundaries == [1] and rec.rival_time == 2 and pre.M == 0
    _, pre = decompose(PATH, 0, (0, 3), rival=1)      # rival at time 0
    assert pre.M == 0 and not pre.anchor_hit
    with pytest.raises(DomainError):
        ExcursionDecomposer(0, (0, 3), rival=0)


def test_anchor_never_hit():
    rec, pre = decompose([1, 2, 3, 2], 0, (0, 3))
    assert rec.n_excursions == 0 and (pre.M, pre.anchor_hit) == (0, False)
    assert rec.pre_visits.tolist() == [0, 1, 2, 1]
    mean, var = rec.mean_profile()
    assert np.isnan(mean).all()


def _path(seed: int, n: int = 20000) -> np.ndarray:
    env = Environment(DEFAULT_LAW, seed)
    return W.trajectory(env, 0, n, derive_key(seed, "path"), box=(-30, 30))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_chunking_invariance_and_reconstruction(seed):
    path = _path(seed)
    whole, pre_w = decompose(path, 0, (-30, 30), rival=25)
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.choice(np.arange(1, len(path)), 40, replace=False))
    parts, pre_p = decompose(np.split(path, cuts), 0, (-30, 30), rival=25)
    assert pre_w == pre_p
    assert whole.boundaries == parts.boundaries
    assert whole.Z.tolist() == parts.Z.tolist()
    assert whole.profiles == parts.profiles
    assert np.array_equal(whole.total_visits(), parts.total_visits())
    end = whole.final_time
    direct = np.bincount(path[:end + 1] + 30, minlength=61)
    assert np.array_equal(whole.total_visits(), direct)
    # each Z_j is the excursion length
    T = whole.boundaries
    assert whole.Z.tolist() == [T[i] - T[i - 1] for i in range(1, len(T))]


def test_mean_profile_matches_exact_excursion_means():
    env = Environment(DEFAULT_LAW, 11)
    V = env.potential_range(-15, 15)
    b = int(np.argmin(V)) - 15
    path = W.trajectory(env, b, 2_000_000, derive_key(11, "exc"), box=(b - 40, b + 40))
    rec, _ = decompose(path, b, (b - 3, b + 3), keep_profiles=False)
    n = rec.n_excursions
    assert n > 1000
    mean, var = rec.mean_profile()
    for i, x in enumerate(range(b - 3, b + 4)):
        if x == b:
            assert mean[i] == 1.0
            continue
        exact = Q.excursion_mean_exact(env, b, x)
        assert abs(mean[i] - exact) <= 5 * np.sqrt(var[i] / n) + 1e-12, (x, mean[i], exact)


def test_geometric_cdf_values():
    assert geometric_cdf(np.array([0, 1, 2]), 0.5).tolist() == [0.0, 0.5, 0.75]
    assert geometric_cdf(np.array([1, 5]), 1.0).tolist() == [1.0, 1.0]


def test_geometric_check_accepts_geometric():
    rng = np.random.default_rng(0)
    rep = geometric_check(rng.geometric(0.3, 5000), 0.3)
    assert rep.passed and rep.q_hat == 1.0
    assert rep.pi_hat == pytest.approx(0.3, rel=0.05)


def test_geometric_check_rejects_shifted_poisson():
    rng = np.random.default_rng(0)
    rep = geometric_check(rng.poisson(2.3, 5000) + 1, 0.3)
    assert rep.passed is False


def test_geometric_check_degenerate_and_small():
    rep = geometric_check(np.ones(500, dtype=int), 1.0)
    assert rep.passed
    small = geometric_check(np.array([0, 1, 2, 0, 3]), 0.5)
    assert small.passed is None and small.n_conditioned == 3
    with pytest.raises(DomainError):
        geometric_check(np.ones(10), 0.0)


def test_visit_counts_geometric_in_random_environment():
    env = Environment(DEFAULT_LAW, 4)
    samples = W.visit_counts(env, 2, -6, 0, 20000, derive_key(4, "geo"))
    rep = geometric_check(samples, Q.escape_prob(env, -6, 0))
    assert rep.passed, rep
