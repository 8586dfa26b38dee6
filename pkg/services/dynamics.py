"""
services/dynamics.py
--------------------
The primal threshold contact process, its dual, and the duality check.

Primal:  xi_{t+1}(x) = 1  iff  B^x_{t+1} = 1 and some y_i(x) is occupied.
Dual:    a vertex z occupied at dual time t with B^z_{T-t} = 1 gives birth
         onto all of y_1(z), ..., y_r(z) at t+1.

Index conventions
-----------------
primal step into time t            : noise column t       (t = 1..T)
horizon-anchored dual step t -> t+1: noise column T - t
free-running dual step t -> t+1    : column t of the "dual" stream

States are numpy bool vectors; ``State.packed()`` gives the 64-bit word
form used by the snapshot dump.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from services.errors import PreconditionError
from services.graph_gen import InGraph
from services.noise import NoiseBatch, NoiseField

logger = logging.getLogger(__name__)

DUAL_STREAM = "dual"

# A step gathers through the OutGraph when the support is this sparse.
_SPARSE_FACTOR = 8


@dataclass(frozen=True, eq=False)
class State:
    bits: np.ndarray  # bool, shape (n,)

    # ----------------------------------------------------------------
    # Construction
    # ----------------------------------------------------------------

    @classmethod
    def empty(cls, n: int) -> "State":
        return cls(np.zeros(n, dtype=bool))

    @classmethod
    def full(cls, n: int) -> "State":
        return cls(np.ones(n, dtype=bool))

    @classmethod
    def from_support(cls, n: int, support: Sequence[int]) -> "State":
        bits = np.zeros(n, dtype=bool)
        idx = np.asarray(list(support), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise PreconditionError(f"support outside V_n for n={n}")
        bits[idx] = True
        return cls(bits)

    @classmethod
    def from_hex(cls, n: int, text: str) -> "State":
        raw = np.frombuffer(bytes.fromhex(text.strip()), dtype=np.uint8)
        bits = np.unpackbits(raw, bitorder="little")[:n].astype(bool)
        if bits.size != n:
            raise PreconditionError(f"hex snapshot too short for n={n}")
        return cls(bits)

    # ----------------------------------------------------------------
    # Queries
    # ----------------------------------------------------------------

    @property
    def n(self) -> int:
        return int(self.bits.size)

    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def is_empty(self) -> bool:
        return not self.bits.any()

    def intersects(self, other: "State") -> bool:
        return bool((self.bits & other.bits).any())

    def issubset(self, other: "State") -> bool:
        return not bool((self.bits & ~other.bits).any())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, State):
            return NotImplemented
        return self.n == other.n and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash((self.n, self.bits.tobytes()))

    # ----------------------------------------------------------------
    # Encoding
    # ----------------------------------------------------------------

    def packed(self) -> np.ndarray:
        """Bit x of word x // 64 is xi(x)."""
        raw = np.packbits(self.bits, bitorder="little")
        pad = (-raw.size) % 8
        if pad:
            raw = np.concatenate([raw, np.zeros(pad, dtype=np.uint8)])
        return raw.view("<u8")

    def to_hex(self) -> str:
        return np.packbits(self.bits, bitorder="little").tobytes().hex()


@dataclass(frozen=True)
class TrajectoryRecord:
    t: int
    occupied: int
    snapshot: Optional[State] = None


@dataclass
class Trajectory:
    records: List[TrajectoryRecord] = field(default_factory=list)

    def append(self, t: int, state: State, keep_snapshot: bool = False) -> None:
        if self.records and t <= self.records[-1].t:
            raise ValueError(f"trajectory times must increase (got {t} after {self.records[-1].t})")
        self.records.append(
            TrajectoryRecord(t=t, occupied=state.popcount(), snapshot=state if keep_snapshot else None)
        )

    def __len__(self) -> int:
        return len(self.records)

    def occupied_counts(self) -> List[int]:
        return [rec.occupied for rec in self.records]

    def extinction_time(self) -> Optional[int]:
        """First t >= 1 with no occupied site, or None if never reached."""
        for rec in self.records:
            if rec.t >= 1 and rec.occupied == 0:
                return rec.t
        return None

    def snapshots(self) -> List[State]:
        return [rec.snapshot for rec in self.records if rec.snapshot is not None]


# ----------------------------------------------------------------
# Single steps
# ----------------------------------------------------------------

def _check_size(g: InGraph, s: State) -> None:
    if s.n != g.n:
        raise PreconditionError(f"state has size {s.n}, graph has n={g.n}")


def _primal_bits(g: InGraph, bits: np.ndarray, noise: NoiseField, t_next: int) -> np.ndarray:
    support = np.flatnonzero(bits)
    if support.size * g.r * _SPARSE_FACTOR < g.n:
        reached = np.zeros(g.n, dtype=bool)
        targets = g.out.gather(support)
        if targets.size:
            candidates = np.unique(targets)
            reached[candidates[noise.bits(t_next, candidates)]] = True
        return reached
    has_input = bits[g.in_nbrs].any(axis=1)
    return has_input & noise.column(t_next, g.n)


def _birth_bits(g: InGraph, bits: np.ndarray, noise: NoiseField, column: int) -> np.ndarray:
    support = np.flatnonzero(bits)
    born = np.zeros(g.n, dtype=bool)
    if support.size:
        givers = support[noise.bits(column, support)]
        born[g.in_nbrs[givers].ravel()] = True
    return born


def primal_step(g: InGraph, s: State, noise: NoiseField, t_next: int) -> State:
    _check_size(g, s)
    return State(_primal_bits(g, s.bits, noise, t_next))


def dual_step(g: InGraph, s: State, noise: NoiseField, T: int, t: int) -> State:
    """One horizon-anchored dual step t -> t+1, reading B^z_{T-t}."""
    if not 0 <= t < T:
        raise PreconditionError(f"dual step needs 0 <= t < T (got t={t}, T={T})")
    _check_size(g, s)
    return State(_birth_bits(g, s.bits, noise, T - t))


# ----------------------------------------------------------------
# Runs
# ----------------------------------------------------------------

def run_primal(
    g: InGraph,
    noise: NoiseField,
    A: State,
    T: int,
    keep_snapshots: bool = False,
) -> Trajectory:
    if T < 0:
        raise PreconditionError(f"T must be >= 0 (got {T})")
    _check_size(g, A)
    traj = Trajectory()
    state = A
    traj.append(0, state, keep_snapshots)
    for t in range(1, T + 1):
        state = State(_primal_bits(g, state.bits, noise, t))
        traj.append(t, state, keep_snapshots)
    return traj


def run_dual(
    g: InGraph,
    noise: NoiseField,
    B: State,
    T: int,
    free_running: bool = False,
    keep_snapshots: bool = False,
) -> Trajectory:
    """
    hat xi^{B,T}_t for t = 0..T.

    With ``free_running`` the step t -> t+1 reads column t of the
    independent dual stream instead of the reversed primal field.
    """
    if T < 0:
        raise PreconditionError(f"T must be >= 0 (got {T})")
    _check_size(g, B)
    field_ = dual_field(noise) if free_running else noise
    traj = Trajectory()
    state = B
    traj.append(0, state, keep_snapshots)
    for t in range(T):
        column = t if free_running else T - t
        state = State(_birth_bits(g, state.bits, field_, column))
        traj.append(t + 1, state, keep_snapshots)
    return traj


def dual_field(noise: NoiseField) -> NoiseField:
    if noise.stream == DUAL_STREAM:
        return noise
    return noise.for_stream(DUAL_STREAM)


def check_duality(g: InGraph, noise: NoiseField, A: State, B: State, T: int) -> bool:
    """{xi^A_T meets B} == {hat xi^{B,T}_T meets A} for this realisation."""
    if T < 0:
        raise PreconditionError(f"T must be >= 0 (got {T})")
    _check_size(g, A)
    _check_size(g, B)

    forward = A.bits
    for t in range(1, T + 1):
        forward = _primal_bits(g, forward, noise, t)

    backward = B.bits
    for t in range(T):
        backward = _birth_bits(g, backward, noise, T - t)

    lhs = bool((forward & B.bits).any())
    rhs = bool((backward & A.bits).any())
    return lhs == rhs


def descendants(
    g: InGraph,
    noise: NoiseField,
    start_support: np.ndarray,
    start: int,
    steps: int,
    on_step: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None,
) -> np.ndarray:
    """
    Support of the free-running dual ``steps`` steps after dual time
    ``start``, begun from ``start_support``.

    ``on_step(t, support, givers)`` sees each step's parents and the subset
    that gave birth, before the step is applied.
    """
    support = np.unique(np.asarray(start_support, dtype=np.int64))
    for t in range(start, start + steps):
        if support.size == 0:
            break
        givers = support[noise.bits(t, support)]
        if on_step is not None:
            on_step(t, support, givers)
        support = np.unique(g.in_nbrs[givers].ravel())
    return support


def first_extinction(g: InGraph, noise: NoiseField, A: State, t_max: int) -> Optional[int]:
    """Extinction time of the primal run from A, or None if alive at t_max."""
    _check_size(g, A)
    bits = A.bits
    for t in range(1, t_max + 1):
        bits = _primal_bits(g, bits, noise, t)
        if not bits.any():
            return t
    return None


def is_monotone_pair(g: InGraph, noise: NoiseField, A: State, A2: State, T: int) -> bool:
    """For A <= A2, check xi^A_t <= xi^{A2}_t at every t <= T."""
    if not A.issubset(A2):
        raise PreconditionError("is_monotone_pair needs A to be a subset of A2")
    small, large = A.bits, A2.bits
    for t in range(1, T + 1):
        small = _primal_bits(g, small, noise, t)
        large = _primal_bits(g, large, noise, t)
        if (small & ~large).any():
            return False
    return True


# ----------------------------------------------------------------
# Replicate ensemble
# ----------------------------------------------------------------

@dataclass
class EnsembleResult:
    extinction_times: np.ndarray  # -1 where the run survived to t_max
    window_sums: np.ndarray  # sum of occupied counts over the window
    window_length: int
    final_counts: np.ndarray

    @property
    def censored(self) -> np.ndarray:
        return self.extinction_times < 0

    def window_means(self, n: int) -> np.ndarray:
        """Mean occupied fraction over the window; extinct steps count as 0."""
        if self.window_length == 0:
            return np.zeros_like(self.window_sums, dtype=float)
        return self.window_sums / (self.window_length * n)


def run_primal_ensemble(
    graphs: Sequence[InGraph],
    noises: Sequence[NoiseField],
    t_max: int,
    window: Optional[tuple] = None,
    initial: Optional[np.ndarray] = None,
) -> EnsembleResult:
    """
    Run one primal process per (graph, noise) pair from full occupancy
    (or ``initial``, shape (R, n)) for up to ``t_max`` steps, all replicates
    advanced together.  ``window=(lo, hi)`` accumulates occupied counts for
    lo <= t <= hi.
    """
    if len(graphs) != len(noises) or not graphs:
        raise PreconditionError("need one noise field per graph")
    n = graphs[0].n
    if any(g.n != n or g.r != graphs[0].r for g in graphs):
        raise PreconditionError("ensemble graphs must share n and r")

    reps = len(graphs)
    table = np.stack([g.in_nbrs for g in graphs])
    batch = NoiseBatch(noises)
    state = np.ones((reps, n), dtype=bool) if initial is None else np.array(initial, dtype=bool)

    lo, hi = window if window is not None else (1, 0)
    extinction = np.full(reps, -1, dtype=np.int64)
    window_sums = np.zeros(reps, dtype=np.int64)

    alive = np.arange(reps)
    tab = table
    for t in range(1, t_max + 1):
        if alive.size == 0:
            break
        rows = np.arange(alive.size)[:, None, None]
        has_input = state[alive][rows, tab].any(axis=2)
        new = has_input & batch.bits(t, n, alive)
        state[alive] = new
        counts = new.sum(axis=1)
        if lo <= t <= hi:
            window_sums[alive] += counts
        died = counts == 0
        if died.any():
            extinction[alive[died]] = t
            alive = alive[~died]
            tab = table[alive]

    return EnsembleResult(
        extinction_times=extinction,
        window_sums=window_sums,
        window_length=max(0, min(hi, t_max) - lo + 1),
        final_counts=state.sum(axis=1),
    )
