"""
services/psi_tree.py
--------------------
The forest T_m, the collision marking psi(A), and family checks.

T_m is m rooted r-ary trees of depth g.  A position sigma is a tuple
(sigma_0, sigma_1, ..., sigma_i) with sigma_0 in 1..m and the rest in 1..r
(1-based, as written).  Positions are enumerated level by level, then
lexicographically; within level i the local index of sigma is

    (sigma_0 - 1) * r^i + sum_k (sigma_k - 1) * r^(i - k)

so the children of local index k are k*r .. k*r + r - 1 on the next level
and every array below is indexed by that global enumeration.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from services.errors import BudgetExceededError, PreconditionError
from services.graph_gen import InGraph
from services.noise import NoiseField

logger = logging.getLogger(__name__)

TreeIndex = Tuple[int, ...]

DEFAULT_EXACT_BUDGET = 24
_EPS = 1e-9


def _ceil(x: float) -> int:
    # Tolerates float noise in products like 0.625 * 8.
    return max(0, math.ceil(x - _EPS))


# ----------------------------------------------------------------
# Parameters
# ----------------------------------------------------------------

@dataclass(frozen=True)
class PsiParams:
    q_tilde: float
    delta: float
    g: int

    def validate(self, q: float, r: int) -> List[str]:
        errors: List[str] = []
        if not self.q_tilde < q:
            errors.append(f"q_tilde must be < q (got q_tilde={self.q_tilde}, q={q})")
        if not self.q_tilde * r > 1:
            errors.append(f"q_tilde * r must exceed 1 (got {self.q_tilde * r:.6g})")
        gap = min(self.q_tilde * r - 1, 1.0)
        if not 0 < self.delta < gap:
            errors.append(f"delta must lie in (0, {gap:.6g}) (got {self.delta})")
        if self.g < 1:
            errors.append(f"g must be >= 1 (got {self.g})")
        elif not _growth_holds(self.q_tilde, self.delta, r, self.g):
            errors.append(
                f"(q_tilde*r - 1 - delta)(q_tilde*r)^(g-1) must exceed 1 + delta (g={self.g})"
            )
        return errors

    def level_threshold(self, r: int, m: int, j: int) -> float:
        """Lower bound of condition (iii) at level j."""
        qr = self.q_tilde * r
        return (qr - 1 - self.delta) * qr**j * m


def _growth_holds(q_tilde: float, delta: float, r: int, g: int) -> bool:
    qr = q_tilde * r
    return (qr - 1 - delta) * qr ** (g - 1) > 1 + delta


def minimal_g(q_tilde: float, delta: float, r: int, limit: int = 100_000) -> int:
    if q_tilde * r - 1 - delta <= 0:
        raise PreconditionError("q_tilde * r - 1 - delta must be positive")
    for g in range(1, limit + 1):
        if _growth_holds(q_tilde, delta, r, g):
            return g
    raise PreconditionError(f"no g <= {limit} satisfies the growth inequality")


def default_params(q: float, r: int) -> PsiParams:
    if not q * r > 1:
        raise PreconditionError(f"default_params needs q*r > 1 (got q={q}, r={r})")
    q_tilde = (q + 1.0 / r) / 2.0
    delta = min(q_tilde * r - 1.0, 1.0) / 2.0
    return PsiParams(q_tilde=q_tilde, delta=delta, g=minimal_g(q_tilde, delta, r))


# ----------------------------------------------------------------
# Tree geometry
# ----------------------------------------------------------------

@dataclass(frozen=True)
class TreeShape:
    m: int
    r: int
    g: int

    def __post_init__(self):
        if min(self.m, self.r) < 1 or self.g < 0:
            raise PreconditionError(f"invalid tree shape m={self.m} r={self.r} g={self.g}")

    @cached_property
    def offsets(self) -> np.ndarray:
        """offsets[i] = first global position of level i; offsets[g+1] = size."""
        sizes = [self.m * self.r**i for i in range(self.g + 1)]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def level_size(self, i: int) -> int:
        return self.m * self.r**i

    def level_range(self, i: int) -> range:
        return range(int(self.offsets[i]), int(self.offsets[i + 1]))

    def level_of(self, pos: int) -> int:
        return int(np.searchsorted(self.offsets, pos, side="right") - 1)

    def levels(self) -> np.ndarray:
        """Level of every global position."""
        return np.repeat(np.arange(self.g + 1), np.diff(self.offsets))

    def position(self, sigma: TreeIndex) -> int:
        i = len(sigma) - 1
        if not 0 <= i <= self.g:
            raise PreconditionError(f"{sigma} has no level in T_m with g={self.g}")
        if not 1 <= sigma[0] <= self.m or any(not 1 <= s <= self.r for s in sigma[1:]):
            raise PreconditionError(f"{sigma} out of range for m={self.m}, r={self.r}")
        local = sigma[0] - 1
        for s in sigma[1:]:
            local = local * self.r + (s - 1)
        return int(self.offsets[i]) + local

    def sigma(self, pos: int) -> TreeIndex:
        i = self.level_of(pos)
        local = pos - int(self.offsets[i])
        tail = []
        for _ in range(i):
            local, digit = divmod(local, self.r)
            tail.append(digit + 1)
        return (local + 1,) + tuple(reversed(tail))

    def child_positions(self, positions: np.ndarray, level: int) -> np.ndarray:
        """Global positions of all children of ``positions`` (all on ``level``)."""
        if level >= self.g:
            raise PreconditionError(f"positions at level {level} = g have no children")
        local = np.asarray(positions, dtype=np.int64) - self.offsets[level]
        kids = (local[:, None] * self.r + np.arange(self.r)).ravel()
        return np.sort(kids) + self.offsets[level + 1]

    def ancestors_blocked(self, bits: np.ndarray) -> np.ndarray:
        """True where some strict ancestor is set in ``bits``."""
        blocked = np.zeros(self.size, dtype=bool)
        for i in range(1, self.g + 1):
            up = self.level_range(i - 1)
            parent_flag = blocked[up.start:up.stop] | bits[up.start:up.stop]
            here = self.level_range(i)
            blocked[here.start:here.stop] = np.repeat(parent_flag, self.r)
        return blocked


def enumerate_tm(m: int, r: int, g: int) -> List[TreeIndex]:
    if min(m, r, g) < 1:
        raise PreconditionError(f"enumerate_tm needs m, r, g >= 1 (got {m}, {r}, {g})")
    out: List[TreeIndex] = []
    for i in range(g + 1):
        for head in range(1, m + 1):
            for tail in itertools.product(range(1, r + 1), repeat=i):
                out.append((head,) + tail)
    return out


def children(B: Iterable[TreeIndex], r: int, g: int) -> FrozenSet[TreeIndex]:
    """J(B): every child of every member of B."""
    kids = set()
    for sigma in B:
        if len(sigma) - 1 >= g:
            raise PreconditionError(f"{sigma} is on level g={g} and has no children")
        kids.update(sigma + (j,) for j in range(1, r + 1))
    return frozenset(kids)


# ----------------------------------------------------------------
# z map and psi construction
# ----------------------------------------------------------------

def z_map(A: Sequence[int], sigma: TreeIndex, g: InGraph) -> int:
    """z^sigma = y_{sigma_i}(... y_{sigma_1}(x_{sigma_0}))."""
    ordered = sorted(int(a) for a in A)
    if not 1 <= sigma[0] <= len(ordered):
        raise PreconditionError(f"sigma_0={sigma[0]} out of range for |A|={len(ordered)}")
    x = ordered[sigma[0] - 1]
    for s in sigma[1:]:
        if not 1 <= s <= g.r:
            raise PreconditionError(f"slot {s} out of range for r={g.r}")
        x = int(g.in_nbrs[x, s - 1])
    return x


@dataclass(frozen=True, eq=False)
class PsiConfig:
    shape: TreeShape
    bits: np.ndarray  # bool over T_m in enumeration order
    z_values: Optional[np.ndarray] = None

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        object.__setattr__(self, "bits", bits)
        if bits.size != self.shape.size:
            raise PreconditionError(f"psi has {bits.size} bits, T_m has {self.shape.size}")
        if bits[: self.shape.m].any():
            raise PreconditionError("root positions must be 0")
        if (bits & self.shape.ancestors_blocked(bits)).any():
            raise PreconditionError("a 1 sits below another 1")

    @classmethod
    def from_ones(cls, m: int, r: int, g: int, ones: Iterable) -> "PsiConfig":
        """Build from marked positions, given as TreeIndex tuples or global ints."""
        shape = TreeShape(m, r, g)
        bits = np.zeros(shape.size, dtype=bool)
        for item in ones:
            pos = shape.position(tuple(item)) if isinstance(item, tuple) else int(item)
            bits[pos] = True
        return cls(shape=shape, bits=bits)

    @property
    def m(self) -> int:
        return self.shape.m

    @property
    def r(self) -> int:
        return self.shape.r

    @property
    def g(self) -> int:
        return self.shape.g

    @cached_property
    def d(self) -> int:
        return int(np.count_nonzero(self.bits))

    @cached_property
    def zeros(self) -> np.ndarray:
        return ~self.bits

    def value(self, sigma: TreeIndex) -> int:
        return int(self.bits[self.shape.position(sigma)])

    def ones_per_level(self) -> List[int]:
        return [int(self.bits[rg.start:rg.stop].sum()) for rg in map(self.shape.level_range, range(self.g + 1))]

    def rows(self) -> Iterator[Dict]:
        """Dump rows (sigma, level, z_value, psi_bit) in enumeration order."""
        levels = self.shape.levels()
        for pos in range(self.shape.size):
            yield {
                "sigma": format_sigma(self.shape.sigma(pos)),
                "level": int(levels[pos]),
                "z_value": "" if self.z_values is None else int(self.z_values[pos]),
                "psi_bit": int(self.bits[pos]),
            }


def format_sigma(sigma: TreeIndex) -> str:
    return "-".join(str(s) for s in sigma)


def build_psi(A: Iterable[int], g: InGraph, params: PsiParams) -> PsiConfig:
    """
    Inspect positions in order: roots get 0; a later position gets 1 iff
    no ancestor is marked and its z value already appeared at an earlier
    position.
    """
    roots = np.unique(np.asarray(list(A), dtype=np.int64))
    if roots.size == 0:
        raise PreconditionError("build_psi needs |A| >= 1")
    if roots.min() < 0 or roots.max() >= g.n:
        raise PreconditionError("A must be a subset of V_n")

    r, depth = g.r, params.g
    shape = TreeShape(int(roots.size), r, depth)
    z_levels = [roots]
    bit_levels = [np.zeros(roots.size, dtype=bool)]
    blocked = np.zeros(roots.size, dtype=bool)
    seen = roots

    for _ in range(depth):
        z = g.in_nbrs[z_levels[-1]].ravel()
        repeated = np.ones(z.size, dtype=bool)
        _, first = np.unique(z, return_index=True)
        repeated[first] = False
        repeated |= np.isin(z, seen)
        blocked = np.repeat(blocked | bit_levels[-1], r)
        bit_levels.append(repeated & ~blocked)
        z_levels.append(z)
        seen = np.union1d(seen, z)

    z_values = np.concatenate(z_levels)
    z_values.setflags(write=False)
    return PsiConfig(shape=shape, bits=np.concatenate(bit_levels), z_values=z_values)


def fresh_injective(psi: PsiConfig) -> bool:
    """
    Unmarked positions with no marked ancestor carry pairwise distinct z
    values, i.e. every repeated z value lands on a 1 or below one.
    """
    if psi.z_values is None:
        raise PreconditionError("fresh_injective needs a PsiConfig built from a graph")
    fresh = psi.zeros & ~psi.shape.ancestors_blocked(psi.bits)
    values = psi.z_values[fresh]
    return int(np.unique(values).size) == int(values.size)


def psi_marginal_bound(m: int, r: int, g: int, n: int) -> float:
    """(m + rm + ... + r^g m) / (n - r): bound on P(psi(sigma) = 1)."""
    if n <= r:
        raise PreconditionError(f"need n > r (got n={n}, r={r})")
    return TreeShape(m, r, g).size / (n - r)


# ----------------------------------------------------------------
# Families
# ----------------------------------------------------------------

@dataclass(frozen=True)
class Family:
    levels: Tuple[FrozenSet[TreeIndex], ...] = field(default_factory=tuple)

    @classmethod
    def of(cls, *levels: Iterable[TreeIndex]) -> "Family":
        return cls(tuple(frozenset(tuple(s) for s in lvl) for lvl in levels))

    @classmethod
    def from_positions(cls, shape: TreeShape, levels: Sequence[np.ndarray]) -> "Family":
        return cls(tuple(frozenset(shape.sigma(int(p)) for p in lvl) for lvl in levels))

    @property
    def depth(self) -> int:
        """Index i of the last level B_i."""
        return len(self.levels) - 1

    def structure_errors(self, shape: TreeShape) -> List[str]:
        errors: List[str] = []
        if not self.levels:
            return ["a family needs at least B_0"]
        if self.depth >= shape.g:
            errors.append(f"family reaches level {self.depth}, must stay below g={shape.g}")
        if any(len(s) != 1 or not 1 <= s[0] <= shape.m for s in self.levels[0]):
            errors.append("B_0 must be a set of roots")
        for j in range(len(self.levels) - 1):
            allowed = children(self.levels[j], shape.r, shape.g + 1)
            if not self.levels[j + 1] <= allowed:
                errors.append(f"B_{j + 1} is not contained in J(B_{j})")
        return errors

    def positions(self, shape: TreeShape) -> List[np.ndarray]:
        return [
            np.array(sorted(shape.position(s) for s in lvl), dtype=np.int64)
            for lvl in self.levels
        ]


def _zero_children(psi: PsiConfig, positions: np.ndarray, level: int) -> np.ndarray:
    kids = psi.shape.child_positions(positions, level)
    return kids[psi.zeros[kids]]


def _check_family(psi: PsiConfig, fam: Family) -> List[np.ndarray]:
    errors = fam.structure_errors(psi.shape)
    if errors:
        raise PreconditionError("; ".join(errors))
    return fam.positions(psi.shape)


def _admissible(psi: PsiConfig, levels: List[np.ndarray], params: PsiParams) -> bool:
    for j, pos in enumerate(levels):
        if psi.bits[pos].any():
            return False
        if j == 0:
            need = params.q_tilde * psi.m
        else:
            need = params.q_tilde * _zero_children(psi, levels[j - 1], j - 1).size
        if pos.size < _ceil(need):
            return False
    return True


def _expands(psi: PsiConfig, pos: np.ndarray, j: int, params: PsiParams) -> bool:
    available = _zero_children(psi, pos, j).size
    return available >= _ceil(params.level_threshold(psi.r, psi.m, j))


def is_admissible(psi: PsiConfig, fam: Family, params: PsiParams) -> bool:
    return _admissible(psi, _check_family(psi, fam), params)


def is_good(psi: PsiConfig, fam: Family, params: PsiParams) -> bool:
    levels = _check_family(psi, fam)
    if not _admissible(psi, levels, params):
        return False
    return all(_expands(psi, pos, j, params) for j, pos in enumerate(levels))


def is_robust_sufficient(psi: PsiConfig, params: PsiParams) -> bool:
    """d <= (1 + delta) m; True implies robust, False is inconclusive."""
    return psi.d <= (1 + params.delta) * psi.m + _EPS


def find_non_good_family(
    psi: PsiConfig,
    params: PsiParams,
    budget: int = DEFAULT_EXACT_BUDGET,
) -> Optional[Family]:
    """
    Exhaustive search for an admissible family that is not good.

    A prefix of an admissible family is admissible, so the search extends
    admissible prefixes level by level and stops at the first level where
    the expansion bound fails.
    """
    if psi.shape.size > budget:
        raise BudgetExceededError(
            f"|T_m| = {psi.shape.size} exceeds the exhaustive budget of {budget} positions"
        )

    def subsets(pool: np.ndarray, minimum: int) -> Iterator[np.ndarray]:
        for k in range(minimum, pool.size + 1):
            for combo in itertools.combinations(pool.tolist(), k):
                yield np.array(combo, dtype=np.int64)

    def search(prefix: List[np.ndarray]) -> Optional[List[np.ndarray]]:
        j = len(prefix) - 1
        if not _expands(psi, prefix[-1], j, params):
            return prefix
        if j + 1 >= psi.g:
            return None
        pool = _zero_children(psi, prefix[-1], j)
        for nxt in subsets(pool, _ceil(params.q_tilde * pool.size)):
            found = search(prefix + [nxt])
            if found is not None:
                return found
        return None

    zero_roots = np.flatnonzero(psi.zeros[: psi.m])
    for b0 in subsets(zero_roots, _ceil(params.q_tilde * psi.m)):
        found = search([b0])
        if found is not None:
            fam = Family.from_positions(psi.shape, found)
            logger.debug("Non-good admissible family found at depth %d", fam.depth)
            return fam
    return None


def is_robust_exact(
    psi: PsiConfig,
    params: PsiParams,
    budget: int = DEFAULT_EXACT_BUDGET,
) -> bool:
    return find_non_good_family(psi, params, budget) is None


# ----------------------------------------------------------------
# Realised birth family
# ----------------------------------------------------------------

def birth_family(psi: PsiConfig, noise: NoiseField, start: int = 0) -> List[np.ndarray]:
    """
    B_0 = roots whose vertex gives birth at dual time ``start``;
    B_{j+1} = unmarked children of B_j whose vertex gives birth at start+j+1.
    Levels run to g - 1.  Positions are global indices.
    """
    if psi.z_values is None:
        raise PreconditionError("birth_family needs a PsiConfig built from a graph")
    roots = np.arange(psi.m, dtype=np.int64)
    levels = [roots[noise.bits(start, psi.z_values[roots])]]
    for j in range(psi.g - 1):
        pool = _zero_children(psi, levels[-1], j)
        born = noise.bits(start + j + 1, psi.z_values[pool]) if pool.size else np.zeros(0, bool)
        levels.append(pool[born])
    return levels


def zero_children_counts(psi: PsiConfig, levels: List[np.ndarray]) -> List[int]:
    """|J(B_j) intersected with {psi = 0}| for each level of a position family."""
    return [_zero_children(psi, pos, j).size for j, pos in enumerate(levels)]


def all_consistent_configs(
    m: int, r: int, g: int, max_ones: Optional[int] = None
) -> Iterator[PsiConfig]:
    """
    Every psi on T_m with zero roots and no 1 below a 1 (tiny shapes only),
    optionally restricted to at most ``max_ones`` marks.
    """
    shape = TreeShape(m, r, g)

    def extend(level: int, bits: np.ndarray) -> Iterator[np.ndarray]:
        if level > g:
            yield bits
            return
        rng_ = shape.level_range(level)
        free = np.flatnonzero(~shape.ancestors_blocked(bits)[rng_.start:rng_.stop]) + rng_.start
        for mask in itertools.product((False, True), repeat=free.size):
            nxt = bits.copy()
            nxt[free[np.array(mask, dtype=bool)]] = True
            if max_ones is not None and nxt.sum() > max_ones:
                continue
            yield from extend(level + 1, nxt)

    for bits in extend(1, np.zeros(shape.size, dtype=bool)):
        yield PsiConfig(shape=shape, bits=bits)
