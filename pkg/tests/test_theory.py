import itertools
import math

import pytest

from services.errors import PreconditionError
from services.theory import (
    OffspringLaw,
    binomial_lower_tail_bound,
    binomial_lower_tail_exact,
    chernoff_rate,
    extinction_probability,
    gamma_fn,
    rho,
    simulate_branching,
)


def _quadratic_oracle(q: float) -> float:
    # r = 2: roots of q s^2 - s + (1 - q) are 1 and (1 - q) / q
    return 1.0 - (1.0 - q) / q


@pytest.mark.parametrize("q", [0.55, 0.6, 0.75, 0.9, 0.99])
def test_rho_matches_quadratic_oracle(q):
    assert rho(OffspringLaw(q, 2)) == pytest.approx(_quadratic_oracle(q), abs=1e-10)


def test_rho_reference_values():
    assert abs(rho(OffspringLaw(0.75, 2)) - 2.0 / 3.0) <= 1e-10
    # r = 3: s^3 - (5/3)s + 2/3 = (s - 1)(s^2 + s - 2/3)
    expected = 1.0 - (-1.0 + math.sqrt(1.0 + 8.0 / 3.0)) / 2.0
    assert rho(OffspringLaw(0.6, 3)) == pytest.approx(expected, abs=1e-9)
    assert rho(OffspringLaw(0.6, 3)) == pytest.approx(0.5425694, abs=1e-6)


def test_rho_boundary_cases():
    assert rho(OffspringLaw(0.5, 2)) == 0.0
    assert rho(OffspringLaw(0.3, 2)) == 0.0
    assert rho(OffspringLaw(1.0, 2)) == 1.0
    assert rho(OffspringLaw(1.0, 1)) == 0.0
    assert extinction_probability(OffspringLaw(0.75, 2)) == pytest.approx(1.0 / 3.0, abs=1e-10)


def test_rho_increases_in_q():
    values = [rho(OffspringLaw(q, 2)) for q in (0.51, 0.6, 0.7, 0.8, 0.9)]
    assert all(b > a for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("q,r", [(0.6, 2), (0.75, 2), (0.4, 3), (0.6, 3), (0.3, 5), (0.9, 5)])
def test_rho_solves_fixed_point(q, r):
    law = OffspringLaw(q, r)
    value = rho(law)
    assert 0 < value < 1
    s = 1.0 - value
    assert abs(law.generating(s) - s) < 1e-9


def test_rho_increases_in_r():
    values = [rho(OffspringLaw(0.6, r)) for r in (1, 2, 3, 4, 6)]
    assert values[0] == 0.0
    assert all(b > a for a, b in zip(values, values[1:]))


def test_rho_near_critical_is_small_and_positive():
    value = rho(OffspringLaw(0.501, 2))
    assert 0 < value < 0.01
    assert value == pytest.approx(_quadratic_oracle(0.501), abs=1e-9)


def test_offspring_law_validation_and_regime():
    with pytest.raises(PreconditionError):
        OffspringLaw(1.2, 2)
    with pytest.raises(PreconditionError):
        OffspringLaw(0.5, 0)
    assert OffspringLaw(0.75, 2).regime == "supercritical"
    assert OffspringLaw(0.5, 2).regime == "critical"
    assert OffspringLaw(0.4, 2).regime == "subcritical"
    with pytest.raises(PreconditionError):
        rho(OffspringLaw(0.75, 2), tol=0)


def test_simulate_branching_agrees_with_rho():
    law = OffspringLaw(0.75, 2)
    sample = simulate_branching(law, generations=30, trials=100_000, seed=1)
    target = rho(law)
    se = sample.standard_error()
    assert sample.trials == 100_000
    assert sample.generation_sizes.shape == (100_000, 31)
    assert target - 3 * se <= sample.survival_frequency <= target + 3 * se + 0.005


def test_simulate_branching_deterministic():
    law = OffspringLaw(0.6, 3)
    a = simulate_branching(law, 10, 500, seed=4)
    b = simulate_branching(law, 10, 500, seed=4)
    assert a.survival_frequency == b.survival_frequency
    with pytest.raises(PreconditionError):
        simulate_branching(law, 0, 10, seed=0)


def test_gamma_fn():
    assert gamma_fn(1.0) == 0.0
    assert gamma_fn(0.5) == pytest.approx(0.5 * math.log(0.5) + 0.5)
    with pytest.raises(PreconditionError):
        gamma_fn(0.0)


@pytest.mark.parametrize(
    "k,p,x", list(itertools.product([5, 10, 20, 30], [0.3, 0.5, 0.75], [0.5, 0.7, 0.9]))
)
def test_exact_tail_below_chernoff_bound(k, p, x):
    assert binomial_lower_tail_exact(k, p, x) <= binomial_lower_tail_bound(k, p, x)


def test_exact_tail_values():
    # threshold 0.75: only X = 0 lies strictly below
    assert binomial_lower_tail_exact(5, 0.3, 0.5) == pytest.approx(0.7**5)
    # threshold exactly 4: X <= 3
    assert binomial_lower_tail_exact(10, 0.5, 0.8) == pytest.approx(176 / 1024)
    # threshold 0.05: only X = 0
    assert binomial_lower_tail_exact(1, 0.1, 0.5) == pytest.approx(0.9)


def test_tail_argument_checks():
    for args in [(0, 0.5, 0.5), (5, 0.0, 0.5), (5, 0.5, 1.0), (5, 0.5, 0.0)]:
        with pytest.raises(PreconditionError):
            binomial_lower_tail_bound(*args)
        with pytest.raises(PreconditionError):
            binomial_lower_tail_exact(*args)


def test_chernoff_rate():
    assert chernoff_rate(0.625, 0.75) == pytest.approx(gamma_fn(0.625 / 0.75) * 0.75)
    assert chernoff_rate(0.625, 0.75) > 0
    with pytest.raises(PreconditionError):
        chernoff_rate(0.8, 0.75)
