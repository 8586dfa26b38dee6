"""
services/theory.py
------------------
Branching-process survival, the Chernoff-type binomial bound, and a
Monte Carlo branching oracle.

Offspring law: r children with probability q, none otherwise.  The
extinction probability is the smallest root in [0, 1] of
h(s) = (1 - q) + q s^r - s; rho = 1 - that root.

gamma uses the natural logarithm.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List

import numpy as np
from scipy import optimize, stats

from services.errors import PreconditionError
from services.noise import make_rng

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class OffspringLaw:
    q: float
    r: int

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise PreconditionError(f"q must lie in [0, 1] (got {self.q})")
        if self.r < 1:
            raise PreconditionError(f"r must be >= 1 (got {self.r})")

    @property
    def mean(self) -> float:
        return self.q * self.r

    @property
    def regime(self) -> str:
        if self.mean > 1:
            return "supercritical"
        if self.mean == 1:
            return "critical"
        return "subcritical"

    def generating(self, s: float) -> float:
        return (1.0 - self.q) + self.q * s**self.r


def rho(law: OffspringLaw, tol: float = DEFAULT_TOL) -> float:
    """Survival probability, to absolute accuracy ``tol``."""
    if tol <= 0:
        raise PreconditionError(f"tol must be > 0 (got {tol})")
    if law.mean <= 1:
        return 0.0
    if law.q == 1.0:
        return 1.0

    def h(s: float) -> float:
        return law.generating(s) - s

    # h(0) = 1 - q > 0 and h < 0 just below 1 in the supercritical case.
    upper = 1.0 - 1e-3
    while h(upper) >= 0:
        upper = 1.0 - (1.0 - upper) / 2
        if 1.0 - upper < 1e-15:
            raise PreconditionError(f"could not bracket the extinction root for {law}")
    sigma = optimize.bisect(h, 0.0, upper, xtol=tol / 2, maxiter=500)
    return 1.0 - sigma


def extinction_probability(law: OffspringLaw, tol: float = DEFAULT_TOL) -> float:
    return 1.0 - rho(law, tol)


@dataclass
class BranchingSample:
    survival_frequency: float
    generation_sizes: np.ndarray  # shape (trials, generations + 1)

    @property
    def trials(self) -> int:
        return int(self.generation_sizes.shape[0])

    def standard_error(self) -> float:
        p = self.survival_frequency
        return math.sqrt(p * (1.0 - p) / self.trials)


def simulate_branching(
    law: OffspringLaw,
    generations: int,
    trials: int,
    seed: int,
    cap: int = 10**12,
) -> BranchingSample:
    """
    Galton-Watson trials from one ancestor.  Each generation every
    individual independently has r children with probability q, so the
    number of parents that reproduce is Bin(size, q).  Sizes are capped at
    ``cap`` to keep int64 safe; survival is unaffected.
    """
    if generations < 1 or trials < 1:
        raise PreconditionError("generations and trials must be >= 1")
    rng = make_rng(seed, "branching")
    sizes = np.zeros((trials, generations + 1), dtype=np.int64)
    sizes[:, 0] = 1
    current = sizes[:, 0].copy()
    for t in range(1, generations + 1):
        parents = rng.binomial(current, law.q)
        current = np.minimum(parents * law.r, cap)
        sizes[:, t] = current
    frequency = float(np.mean(current > 0))
    logger.debug("Branching q=%.4f r=%d: survival %.4f over %d trials", law.q, law.r, frequency, trials)
    return BranchingSample(survival_frequency=frequency, generation_sizes=sizes)


def gamma_fn(x: float) -> float:
    if x <= 0:
        raise PreconditionError(f"gamma needs x > 0 (got {x})")
    return x * math.log(x) - x + 1.0


def _check_tail_args(k: int, p: float, x: float) -> None:
    errors: List[str] = []
    if k < 1:
        errors.append(f"k must be >= 1 (got {k})")
    if not 0 < p <= 1:
        errors.append(f"p must lie in (0, 1] (got {p})")
    if not 0 < x < 1:
        errors.append(f"x must lie in (0, 1) (got {x})")
    if errors:
        raise PreconditionError("; ".join(errors))


def binomial_lower_tail_bound(k: int, p: float, x: float) -> float:
    """exp(-gamma(x) k p), an upper bound on P(Bin(k, p) < x k p)."""
    _check_tail_args(k, p, x)
    return math.exp(-gamma_fn(x) * k * p)


def binomial_lower_tail_exact(k: int, p: float, x: float) -> float:
    """P(Bin(k, p) < x k p), with the threshold compared exactly."""
    _check_tail_args(k, p, x)
    threshold = Fraction(str(x)) * k * Fraction(str(p))
    # Largest integer strictly below the threshold.
    below = math.ceil(threshold) - 1
    if below < 0:
        return 0.0
    return float(stats.binom.cdf(below, k, p))


def chernoff_rate(q_tilde: float, q: float) -> float:
    """gamma(q_tilde / q) * q: per-parent exponent of P(Bin(m, q) < q_tilde m)."""
    if not 0 < q_tilde < q <= 1:
        raise PreconditionError(f"need 0 < q_tilde < q <= 1 (got q_tilde={q_tilde}, q={q})")
    return gamma_fn(q_tilde / q) * q
