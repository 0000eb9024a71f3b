from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from sinaiwalk import DEFAULT_LAW, Environment, EnvironmentLaw, InvalidLawError, law_constants
from sinaiwalk.errors import BudgetError
from sinaiwalk.reporting import read_environment, write_csv


def test_two_point_constants():
    delta, M, sigma2 = law_constants(EnvironmentLaw("two-point", 0.25))
    assert delta == 0.25
    assert M == pytest.approx(math.log(3), abs=1e-15)
    assert sigma2 == pytest.approx(math.log(3) ** 2, abs=1e-15)


@pytest.mark.parametrize("param", [0.5, 0.0, -0.1, 0.7])
def test_invalid_parameter_rejected(param):
    with pytest.raises(InvalidLawError):
        EnvironmentLaw("two-point", param)


def test_unknown_kind_rejected():
    with pytest.raises(InvalidLawError):
        EnvironmentLaw("beta", 0.2)


def test_uniform_log_odds_mean_and_variance_by_quadrature():
    law = EnvironmentLaw("uniform-symmetric", 0.1)
    f = lambda w: math.log((1 - w) / w)
    mean = integrate.quad(f, 0.1, 0.9)[0] / 0.8
    second = integrate.quad(lambda w: f(w) ** 2, 0.1, 0.9)[0] / 0.8
    assert abs(mean) < 1e-12
    assert law.sigma2 == pytest.approx(second, rel=1e-10)
    assert law.sigma2 > 0


def test_site_is_repeatable_and_in_support():
    env = Environment(DEFAULT_LAW, 11)
    a = env.site(1234)
    env.ensure(-5000, 5000)
    assert env.site(1234) == a
    w = env.omega_range(-5000, 5000)
    assert set(np.unique(w)) <= {0.25, 0.75}


def test_uniform_support():
    law = EnvironmentLaw("uniform-symmetric", 0.2)
    w = Environment(law, 3).omega_range(-2000, 2000)
    assert w.min() >= 0.2 and w.max() <= 0.8


def test_log_odds_mean_monte_carlo():
    env = Environment(DEFAULT_LAW, 5)
    w = env.omega_range(0, 99_999)
    t = np.log((1 - w) / w)
    assert abs(t.mean()) <= 3 * math.sqrt(DEFAULT_LAW.sigma2 / len(t))


def test_potential_definition_both_signs():
    env = Environment(EnvironmentLaw("uniform-symmetric", 0.1), 9)
    w = env.omega_range(-50, 50)
    t = np.log((1 - w) / w)            # t[i] belongs to site i - 50
    assert env.potential(0) == 0.0
    for x in range(1, 51):
        assert env.potential(x) == pytest.approx(sum(t[50 + i] for i in range(1, x + 1)), abs=1e-12)
    for x in range(-50, 0):
        assert env.potential(x) == pytest.approx(-sum(t[50 + i] for i in range(x + 1, 1)), abs=1e-12)


def test_potential_hand_values():
    env = Environment.from_omegas([0.75, 0.25, 0.25], first_site=-1)
    assert env.potential(1) == pytest.approx(math.log(3))
    # V(-1) = -log((1 - omega_0) / omega_0) = -log 3
    assert env.potential(-1) == pytest.approx(-math.log(3))


def test_increments_bounded_by_M():
    for law in (DEFAULT_LAW, EnvironmentLaw("uniform-symmetric", 0.1)):
        env = Environment(law, 1)
        V = env.potential_range(-20000, 20000)
        assert np.abs(np.diff(V)).max() <= law.M + 1e-12


def test_lattice_potential_is_exact():
    env = Environment(DEFAULT_LAW, 4)
    V = env.potential_range(-100000, 100000)
    M = DEFAULT_LAW.M
    # every value is exactly M times an integer, so equal heights compare equal
    assert np.array_equal(V, np.round(V / M) * M)


@pytest.mark.parametrize("law", [DEFAULT_LAW, EnvironmentLaw("uniform-symmetric", 0.1)])
def test_growth_order_does_not_change_values(law):
    a, b = Environment(law, 21), Environment(law, 21)
    for lo, hi in [(-10, 700), (-3000, 10), (-3500, 60000), (-200000, 0)]:
        a.ensure(lo, hi)
    b.ensure(-200000, 60000)
    assert np.array_equal(a.potential_range(-200000, 60000), b.potential_range(-200000, 60000))
    assert np.array_equal(a.omega_range(-200000, 60000), b.omega_range(-200000, 60000))


def test_cached_potential_matches_recomputation():
    env = Environment(EnvironmentLaw("uniform-symmetric", 0.05), 2)
    w = env.omega_range(-3000, 3000)
    t = np.log1p(-w) - np.log(w)
    V = np.zeros(6001)
    V[3001:] = np.cumsum(t[3001:])
    V[:3000] = -np.cumsum(t[3000:0:-1])[::-1]
    assert np.abs(env.potential_range(-3000, 3000) - V).max() <= 1e-12 * max(1.0, np.abs(V).max())


def test_distinct_seeds_differ():
    assert not np.array_equal(Environment(DEFAULT_LAW, 1).omega_range(0, 200),
                              Environment(DEFAULT_LAW, 2).omega_range(0, 200))


def test_fixture_edges_raise_budget_error():
    env = Environment.from_potential([0, 1, 0], first_site=0)
    with pytest.raises(BudgetError):
        env.potential(5)
    with pytest.raises(BudgetError):
        env.site(0)          # leftmost omega is not determined by a potential fixture


def test_fixture_needs_zero_anchor():
    with pytest.raises(ValueError):
        Environment.from_potential([1.0, 2.0], first_site=0)


def test_reflection_mirrors_potential():
    env = Environment(DEFAULT_LAW, 8)
    ref = env.reflected(-40, 40)
    assert np.array_equal(ref.potential_range(-40, 40), env.potential_range(-40, 40)[::-1])
    # omega'_x = 1 - omega_{1-x}
    for x in range(-38, 40):
        assert ref.site(x) == pytest.approx(1 - env.site(1 - x))


def test_csv_round_trip(tmp_path):
    env = Environment(EnvironmentLaw("uniform-symmetric", 0.1), 3)
    path = write_csv(tmp_path / "env.csv", ("x", "omega", "V"), env.table(-10, 10), "h", 3)
    back = read_environment(path)
    assert np.array_equal(back.potential_range(-10, 10), env.potential_range(-10, 10))
    assert np.array_equal(back.omega_range(-10, 10), env.omega_range(-10, 10))
