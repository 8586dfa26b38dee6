"""
services/graph_gen.py
---------------------
The random digraph G_n and its inversion.

Each vertex x draws an ordered r-tuple (y_1(x), ..., y_r(x)) of distinct
in-neighbours from V_n - {x}, uniformly and independently of every other
vertex.  Tuples (not sets) are kept because the tree map z^sigma indexes
in-neighbours by slot.

Vertex ids are 0-based everywhere in code; the CLI converts to 1-based
only for human-facing output.

Sampling
--------
r <= n/2 : vectorised rejection.  Every row is drawn uniformly from
           V_n - {x} (draw from n-1 values and shift past x); rows with a
           repeated entry are redrawn as a whole, which leaves each row
           uniform over ordered tuples of distinct values.
r >  n/2 : per-row partial shuffle of the candidate array.
"""

import logging
import os
from dataclasses import dataclass
from functools import cached_property
from typing import List, Tuple

import numpy as np

from services.errors import PreconditionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GraphConfig:
    n: int
    r: int
    seed: int

    def validate(self) -> List[str]:
        """Return a list of human-readable error strings; empty = valid."""
        errors: List[str] = []
        if self.r < 1:
            errors.append(f"r must be >= 1 (got r={self.r})")
        if self.n <= self.r:
            errors.append(
                f"n must exceed r to choose r distinct non-self in-neighbours "
                f"(got n={self.n}, r={self.r})"
            )
        if not 0 <= self.seed < 2**64:
            errors.append(f"seed must be a 64-bit unsigned integer (got {self.seed})")
        return errors


@dataclass(frozen=True, eq=False)
class OutGraph:
    """
    Edge inversion in CSR form.

    For source x, ``targets[out_ptr[x]:out_ptr[x+1]]`` are the vertices z
    with y_i(z) = x and ``slots`` holds the matching i (0-based), sorted by
    (z, i).
    """

    n: int
    r: int
    out_ptr: np.ndarray
    targets: np.ndarray
    slots: np.ndarray

    def out_adj(self, x: int) -> List[Tuple[int, int]]:
        lo, hi = self.out_ptr[x], self.out_ptr[x + 1]
        return list(zip(self.targets[lo:hi].tolist(), self.slots[lo:hi].tolist()))

    def degrees(self) -> np.ndarray:
        return np.diff(self.out_ptr)

    @property
    def edge_count(self) -> int:
        return int(self.targets.size)

    def gather(self, sources: np.ndarray) -> np.ndarray:
        """Concatenated out-targets of every vertex in ``sources``."""
        sources = np.asarray(sources, dtype=np.int64)
        if sources.size == 0:
            return np.empty(0, dtype=np.int64)
        starts = self.out_ptr[sources]
        counts = self.out_ptr[sources + 1] - starts
        total = int(counts.sum())
        if total == 0:
            return np.empty(0, dtype=np.int64)
        # Expand [start, start+count) ranges without a Python loop.
        offsets = np.repeat(starts - np.cumsum(counts) + counts, counts)
        return self.targets[offsets + np.arange(total)]

    def to_in_neighbours(self) -> np.ndarray:
        """Re-derive the (n, r) in-neighbour table from the inversion."""
        table = np.full((self.n, self.r), -1, dtype=np.int64)
        sources = np.repeat(np.arange(self.n, dtype=np.int64), self.degrees())
        table[self.targets, self.slots] = sources
        return table


@dataclass(frozen=True, eq=False)
class InGraph:
    config: GraphConfig
    in_nbrs: np.ndarray  # shape (n, r), int64, row x = (y_1(x), ..., y_r(x))

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def r(self) -> int:
        return self.config.r

    def inputs(self, x: int) -> Tuple[int, ...]:
        return tuple(int(v) for v in self.in_nbrs[x])

    @cached_property
    def out(self) -> OutGraph:
        return invert(self)

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.in_nbrs.ravel(), minlength=self.n)

    def same_edges(self, other: "InGraph") -> bool:
        return (
            self.in_nbrs.shape == other.in_nbrs.shape
            and bool(np.array_equal(self.in_nbrs, other.in_nbrs))
        )


# ----------------------------------------------------------------
# Construction
# ----------------------------------------------------------------

def generate(config: GraphConfig) -> InGraph:
    """Draw G_n for (n, r, seed); a pure function of the config."""
    errors = config.validate()
    if errors:
        raise PreconditionError("; ".join(errors))

    n, r = config.n, config.r
    rng = np.random.default_rng(config.seed)

    if 2 * r > n:
        table = _sample_by_shuffle(rng, n, r)
    else:
        table = _sample_by_rejection(rng, n, r)

    logger.debug("Generated graph n=%d r=%d seed=%d", n, r, config.seed)
    table.setflags(write=False)
    return InGraph(config=config, in_nbrs=table)


def _sample_by_rejection(rng: np.random.Generator, n: int, r: int) -> np.ndarray:
    xs = np.arange(n, dtype=np.int64)
    table = _draw_rows(rng, xs, n, r)
    bad = _rows_with_repeats(table)
    while bad.size:
        table[bad] = _draw_rows(rng, xs[bad], n, r)
        bad = bad[_rows_with_repeats(table[bad])]
    return table


def _draw_rows(rng: np.random.Generator, xs: np.ndarray, n: int, r: int) -> np.ndarray:
    draws = rng.integers(0, n - 1, size=(xs.size, r), dtype=np.int64)
    return draws + (draws >= xs[:, None])


def _rows_with_repeats(table: np.ndarray) -> np.ndarray:
    if table.shape[1] < 2:
        return np.empty(0, dtype=np.int64)
    ordered = np.sort(table, axis=1)
    return np.flatnonzero((ordered[:, 1:] == ordered[:, :-1]).any(axis=1))


def _sample_by_shuffle(rng: np.random.Generator, n: int, r: int) -> np.ndarray:
    table = np.empty((n, r), dtype=np.int64)
    candidates = np.arange(n - 1, dtype=np.int64)
    for x in range(n):
        picks = rng.choice(candidates, size=r, replace=False)
        table[x] = picks + (picks >= x)
    return table


def invert(g: InGraph) -> OutGraph:
    """Exact edge inversion with slot information preserved."""
    n, r = g.n, g.r
    flat = g.in_nbrs.ravel()
    # Stable sort keeps (z, i) ascending within each source.
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n)
    out_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=out_ptr[1:])
    targets = (order // r).astype(np.int64)
    slots = (order % r).astype(np.int64)
    for arr in (out_ptr, targets, slots):
        arr.setflags(write=False)
    return OutGraph(n=n, r=r, out_ptr=out_ptr, targets=targets, slots=slots)


def from_out_graph(out: OutGraph, config: GraphConfig) -> InGraph:
    table = out.to_in_neighbours()
    table.setflags(write=False)
    return InGraph(config=config, in_nbrs=table)


# ----------------------------------------------------------------
# Queries
# ----------------------------------------------------------------

def is_tree_neighborhood(g: InGraph, x: int, depth: int) -> bool:
    """
    True iff iterating y_1..y_r from x for ``depth`` generations visits
    1 + r + ... + r^depth pairwise distinct vertices.
    """
    if depth < 0:
        raise PreconditionError(f"depth must be >= 0 (got {depth})")
    seen = {int(x)}
    frontier = np.array([x], dtype=np.int64)
    for _ in range(depth):
        nxt = g.in_nbrs[frontier].ravel()
        if np.unique(nxt).size != nxt.size:
            return False
        if any(int(v) in seen for v in nxt):
            return False
        seen.update(int(v) for v in nxt)
        frontier = nxt
    return True


def tree_fraction(g: InGraph, roots: np.ndarray, depth: int) -> float:
    roots = np.asarray(roots, dtype=np.int64)
    if roots.size == 0:
        return 0.0
    hits = sum(is_tree_neighborhood(g, int(x), depth) for x in roots)
    return hits / roots.size


# ----------------------------------------------------------------
# Text format
# ----------------------------------------------------------------

def save_graph(g: InGraph, path: str) -> None:
    """Header "n r seed", then line k = space-separated in-neighbours of k."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{g.n} {g.r} {g.config.seed}\n")
        for row in g.in_nbrs:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def load_graph(path: str) -> InGraph:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise PreconditionError(f"{path}: header must be 'n r seed'")
        try:
            n, r, seed = (int(v) for v in header)
        except ValueError:
            raise PreconditionError(f"{path}: header must be three integers") from None
        rows = [line.split() for line in fh if line.strip()]

    if len(rows) != n:
        raise PreconditionError(f"{path}: expected {n} vertex lines, found {len(rows)}")
    bad = [k for k, row in enumerate(rows) if len(row) != r]
    if bad:
        raise PreconditionError(f"{path}: row for vertex {bad[0]} has {len(rows[bad[0]])} entries, expected {r}")
    try:
        table = np.array(rows, dtype=np.int64).reshape(n, r)
    except ValueError as exc:
        raise PreconditionError(f"{path}: {exc}") from None

    config = GraphConfig(n=n, r=r, seed=seed)
    errors = config.validate() + _structure_errors(table)
    if errors:
        raise PreconditionError(f"{path}: " + "; ".join(errors[:3]))
    table.setflags(write=False)
    return InGraph(config=config, in_nbrs=table)


def _structure_errors(table: np.ndarray) -> List[str]:
    n = table.shape[0]
    errors: List[str] = []
    if table.size and (table.min() < 0 or table.max() >= n):
        errors.append("in-neighbour id out of range")
    if (table == np.arange(n)[:, None]).any():
        errors.append("self-loop present")
    if _rows_with_repeats(table).size:
        errors.append("repeated in-neighbour in a row")
    return errors


def validate_graph(g: InGraph) -> List[str]:
    """Structural invariants of an InGraph; empty = valid."""
    return _structure_errors(np.asarray(g.in_nbrs))
