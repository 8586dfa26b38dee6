"""
services/experiments.py
-----------------------
Desk-scale experiments for the threshold contact process.

Each experiment is a pure function of its ExperimentConfig: graphs, noise
fields and sampled sets all come from ``derive_seed(cfg.seed, label, ...)``
with fixed labels, and parallel work items are merged by a sort key, so
the thread count never changes the output.

Every experiment returns an ``ExperimentResult`` whose records know their
own CSV row; the CLI writes them.
"""

import logging
import math
import sys
from dataclasses import dataclass, field
from typing import Any, Callable, ClassVar, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from conf.config import ExperimentConfig
from services import analysis
from services.dynamics import DUAL_STREAM, State, descendants, first_extinction, run_primal_ensemble
from services.errors import PreconditionError
from services.graph_gen import GraphConfig, InGraph, generate
from services.noise import NoiseField, derive_seed, make_rng, replica_fields
from services.psi_tree import (
    PsiParams,
    TreeShape,
    birth_family,
    build_psi,
    format_sigma,
    is_robust_sufficient,
    psi_marginal_bound,
    zero_children_counts,
)
from services.theory import OffspringLaw, chernoff_rate, rho

logger = logging.getLogger(__name__)

EventSink = Optional[Callable[[Dict[str, Any]], None]]

# Upper bound on replicate x vertex cells advanced together.
_CELLS_PER_CHUNK = 2_000_000
_LADDER_DEFAULT_ROOTS = 100
_LADDER_SUSTAIN_RUNGS = 10


def _cell(value) -> Any:
    if value is None:
        return ""
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6f}"
    return value


# ----------------------------------------------------------------
# Records
# ----------------------------------------------------------------

@dataclass(frozen=True)
class PersistenceRecord:
    FIELDS: ClassVar[Tuple[str, ...]] = ("n", "replicate", "extinction_time", "censored", "mean_density")

    n: int
    replicate: int
    extinction_time: Optional[int]  # None = alive at t_max
    mean_density: float

    @property
    def censored(self) -> bool:
        return self.extinction_time is None

    def row(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "replicate": self.replicate,
            "extinction_time": _cell(self.extinction_time),
            "censored": _cell(self.censored),
            "mean_density": _cell(self.mean_density),
        }


@dataclass(frozen=True)
class PlateauRecord:
    FIELDS: ClassVar[Tuple[str, ...]] = ("replicate", "mean_density", "died_before_window")

    replicate: int
    mean_density: float
    died_before_window: bool

    def row(self) -> Dict[str, Any]:
        return {k: _cell(getattr(self, k)) for k in self.FIELDS}


@dataclass(frozen=True)
class SeedRecord:
    FIELDS: ClassVar[Tuple[str, ...]] = ("root", "dual_size", "exceeds")

    root: int
    dual_size: int
    exceeds: bool

    def row(self) -> Dict[str, Any]:
        return {k: _cell(getattr(self, k)) for k in self.FIELDS}


@dataclass(frozen=True)
class GrowthRecord:
    FIELDS: ClassVar[Tuple[str, ...]] = (
        "m", "samples", "accepted", "failures", "failure_frequency",
        "acceptance_rate", "chain_violations",
    )

    m: int
    samples: int
    accepted: int
    failures: int
    chain_violations: int

    @property
    def failure_frequency(self) -> float:
        return self.failures / self.accepted if self.accepted else math.nan

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.samples if self.samples else math.nan

    def row(self) -> Dict[str, Any]:
        return {k: _cell(getattr(self, k)) for k in self.FIELDS}


@dataclass(frozen=True)
class PsiOnesRecord:
    FIELDS: ClassVar[Tuple[str, ...]] = ("sigma", "level", "ones", "trials", "frequency", "bound")

    sigma: str
    level: int
    ones: int
    trials: int
    bound: float

    @property
    def frequency(self) -> float:
        return self.ones / self.trials if self.trials else math.nan

    def row(self) -> Dict[str, Any]:
        return {k: _cell(getattr(self, k)) for k in self.FIELDS}


@dataclass(frozen=True)
class LadderRung:
    FIELDS: ClassVar[Tuple[str, ...]] = (
        "root", "rung", "time", "alpha", "zeta_size", "ones",
        "robust_sufficient", "descendants", "growth_ok", "h_chain",
    )

    root: int
    rung: int  # -1 = the seeding step up to s_0
    time: int
    alpha: Optional[int]
    zeta_size: int
    ones: Optional[int]
    robust_sufficient: Optional[bool]
    descendants: int
    growth_ok: Optional[bool]
    h_chain: bool

    def row(self) -> Dict[str, Any]:
        return {k: _cell(getattr(self, k)) for k in self.FIELDS}


@dataclass
class LadderTrace:
    root: int
    rungs: List[LadderRung] = field(default_factory=list)
    status: str = "running"  # extinct | seed-too-small | failure | saturated | cap

    @property
    def seeded(self) -> bool:
        return bool(self.rungs) and self.rungs[0].h_chain

    @property
    def rungs_passed(self) -> int:
        return sum(1 for rung in self.rungs if rung.rung >= 0 and rung.h_chain)


@dataclass(frozen=True)
class CouplingRecord:
    FIELDS: ClassVar[Tuple[str, ...]] = ("q", "extinction_time", "censored")

    q: float
    extinction_time: Optional[int]

    @property
    def censored(self) -> bool:
        return self.extinction_time is None

    def row(self) -> Dict[str, Any]:
        return {
            "q": _cell(self.q),
            "extinction_time": _cell(self.extinction_time),
            "censored": _cell(self.censored),
        }


@dataclass
class ExperimentResult:
    name: str
    fields: Tuple[str, ...]
    records: List[Any]
    summary: Dict[str, Any]

    def rows(self) -> Iterable[Dict[str, Any]]:
        return (rec.row() for rec in self.records)


# ----------------------------------------------------------------
# Plumbing
# ----------------------------------------------------------------

def _emit(sink: EventSink, event: str, **payload) -> None:
    if sink is not None:
        sink({"event": event, **payload})


def _run_parallel(fn: Callable, items: Sequence, threads: int, progress: bool, desc: str) -> List:
    """Results in the order of ``items`` whatever the completion order."""
    bar = tqdm(total=len(items), desc=desc, file=sys.stderr, disable=not progress, leave=False)
    results: List = []
    try:
        if threads <= 1 or len(items) <= 1:
            for item in items:
                results.append(fn(item))
                bar.update()
        else:
            jobs = Parallel(n_jobs=threads, prefer="threads", return_as="generator")
            for res in jobs(delayed(fn)(item) for item in items):
                results.append(res)
                bar.update()
    finally:
        bar.close()
    return results


def _graph(cfg: ExperimentConfig, label: str, n: int, index: int) -> InGraph:
    return generate(GraphConfig(n=n, r=cfg.r, seed=derive_seed(cfg.seed, label, n, index)))


def _chunks(total: int, size: int) -> List[range]:
    size = max(1, size)
    return [range(lo, min(total, lo + size)) for lo in range(0, total, size)]


def _roots(cfg: ExperimentConfig, n: int, default: Optional[int] = None) -> np.ndarray:
    wanted = cfg.roots if cfg.roots is not None else default
    if wanted is None or wanted >= n:
        return np.arange(n, dtype=np.int64)
    rng = make_rng(cfg.seed, "roots", n)
    return np.sort(rng.choice(n, size=wanted, replace=False)).astype(np.int64)


# ----------------------------------------------------------------
# Extinction from full occupancy
# ----------------------------------------------------------------

def _extinction_records(
    cfg: ExperimentConfig,
    t_max: int,
    window: Tuple[int, int],
    progress: bool,
    sink: EventSink,
    ns: Sequence[int],
) -> List[PersistenceRecord]:
    items = []
    for n in ns:
        for reps in _chunks(cfg.trials, _CELLS_PER_CHUNK // n):
            items.append((n, reps))

    def work(item) -> List[PersistenceRecord]:
        n, reps = item
        graphs = [_graph(cfg, "graph", n, i) for i in reps]
        noise_seed = derive_seed(cfg.seed, "noise", n)
        noises = replica_fields(cfg.q, noise_seed, reps)
        res = run_primal_ensemble(graphs, noises, t_max, window=window)
        means = res.window_means(n)
        logger.debug("n=%d replicates %d..%d done", n, reps.start, reps.stop - 1)
        return [
            PersistenceRecord(
                n=n,
                replicate=i,
                extinction_time=None if t < 0 else int(t),
                mean_density=float(mu),
            )
            for i, t, mu in zip(reps, res.extinction_times, means)
        ]

    chunks = _run_parallel(work, items, cfg.threads, progress, "replicates")
    records = sorted((rec for chunk in chunks for rec in chunk), key=lambda rec: (rec.n, rec.replicate))
    for n in ns:
        times = [rec.extinction_time for rec in records if rec.n == n]
        _emit(sink, "grid_point", n=n, median=analysis.censored_median(times),
              censored=analysis.censored_fraction(times))
    return records


def _extinction_summary(records: List[PersistenceRecord], ns: Sequence[int]) -> Dict[str, Any]:
    medians, censored = [], []
    for n in ns:
        times = [rec.extinction_time for rec in records if rec.n == n]
        medians.append(analysis.censored_median(times))
        censored.append(analysis.censored_fraction(times))
        if censored[-1] >= 0.5:
            logger.warning("n=%d: %.0f%% of replicates censored at t_max, median undetermined",
                           n, 100 * censored[-1])
    fit = analysis.log_slope(ns, medians)
    return {
        "n_grid": list(ns),
        "medians": medians,
        "censored_fraction": censored,
        "undetermined": [n for n, med in zip(ns, medians) if not math.isfinite(med)],
        "strictly_increasing": analysis.is_strictly_increasing(medians),
        "log_slope": fit["slope"],
        "log_slope_points": fit["points"],
    }


def persistence_experiment(
    cfg: ExperimentConfig,
    progress: bool = False,
    sink: EventSink = None,
) -> ExperimentResult:
    """Extinction times from full occupancy across the n grid."""
    logger.info("persistence: q=%.4f r=%d n_grid=%s trials=%d", cfg.q, cfg.r, cfg.n_grid, cfg.trials)
    window = (cfg.resolved_burn_in, cfg.window_end)
    records = _extinction_records(cfg, cfg.t_max, window, progress, sink, cfg.n_grid)
    summary = _extinction_summary(records, cfg.n_grid)
    logger.info("persistence: medians %s", summary["medians"])
    return ExperimentResult("persistence", PersistenceRecord.FIELDS, records, summary)


def subcritical_experiment(
    cfg: ExperimentConfig,
    progress: bool = False,
    sink: EventSink = None,
) -> ExperimentResult:
    if cfg.q * cfg.r > 1 and not math.isclose(cfg.q * cfg.r, 1.0):
        raise PreconditionError(f"subcritical experiment needs q*r <= 1 (got {cfg.q * cfg.r:.6g})")
    logger.info("subcritical: q=%.4f r=%d n_grid=%s", cfg.q, cfg.r, cfg.n_grid)
    window = (cfg.resolved_burn_in, cfg.window_end)
    records = _extinction_records(cfg, cfg.t_max, window, progress, sink, cfg.n_grid)
    summary = _extinction_summary(records, cfg.n_grid)
    medians = summary["medians"]
    summary["all_extinct"] = all(not rec.censored for rec in records)
    summary["median_ratio"] = medians[-1] / medians[0] if medians and medians[0] > 0 else math.nan
    mean = cfg.q * cfg.r
    if 0 < mean < 1:
        summary["decay_model"] = [math.log(n) / math.log(1.0 / mean) for n in cfg.n_grid]
    return ExperimentResult("subcritical", PersistenceRecord.FIELDS, records, summary)


# ----------------------------------------------------------------
# Density plateau
# ----------------------------------------------------------------

def density_plateau(
    cfg: ExperimentConfig,
    progress: bool = False,
    sink: EventSink = None,
) -> ExperimentResult:
    """Time-averaged occupied fraction over [burn_in, window_end] at n = cfg.n."""
    if cfg.q * cfg.r <= 1 and cfg.q < 1:
        raise PreconditionError("density plateau needs a supercritical configuration")
    lo, hi = cfg.resolved_burn_in, cfg.window_end
    n = cfg.n
    logger.info("plateau: q=%.4f r=%d n=%d window=[%d, %d]", cfg.q, cfg.r, n, lo, hi)

    records: List[PlateauRecord] = []
    for rec in _extinction_records(cfg, hi, (lo, hi), progress, None, [n]):
        records.append(
            PlateauRecord(
                replicate=rec.replicate,
                mean_density=rec.mean_density,
                died_before_window=not rec.censored,
            )
        )

    died = sum(rec.died_before_window for rec in records)
    if died:
        logger.warning("plateau: %d of %d replicates died before t=%d", died, len(records), hi)
    stats = analysis.mean_and_se(rec.mean_density for rec in records)
    target = rho(OffspringLaw(cfg.q, cfg.r))
    summary = {
        "n": n,
        "window": [lo, hi],
        "mean_density": stats["mean"],
        "standard_error": stats["se"],
        "rho": target,
        "gap": stats["mean"] - target,
        "died_before_window": died,
    }
    _emit(sink, "plateau", **summary)
    return ExperimentResult("plateau", PlateauRecord.FIELDS, records, summary)


# ----------------------------------------------------------------
# Seed fraction (duals from singletons)
# ----------------------------------------------------------------

def dual_sizes(g: InGraph, noise: NoiseField, roots: np.ndarray, steps: int) -> np.ndarray:
    """
    |hat xi^x_steps| for every x in ``roots``, all read off the same
    free-running noise.  Duals are advanced together as (root, vertex)
    pairs encoded as root_index * n + vertex.
    """
    n, r = g.n, g.r
    owner = np.arange(roots.size, dtype=np.int64)
    verts = np.asarray(roots, dtype=np.int64)
    for t in range(steps):
        if verts.size == 0:
            break
        keep = noise.bits(t, verts)
        owner, verts = owner[keep], verts[keep]
        keys = np.unique(np.repeat(owner, r) * n + g.in_nbrs[verts].ravel())
        owner, verts = keys // n, keys % n
    return np.bincount(owner, minlength=roots.size)


def seed_fraction_experiment(
    cfg: ExperimentConfig,
    progress: bool = False,
    sink: EventSink = None,
) -> ExperimentResult:
    """Fraction of roots x with |hat xi^x_{ceil(a log n)}| > n^b."""
    n = cfg.n
    steps = math.ceil(cfg.a * math.log(n))
    threshold = n ** cfg.b
    g = _graph(cfg, "graph", n, 0)
    noise = NoiseField(q=cfg.q, seed=derive_seed(cfg.seed, "dual-noise", n), stream=DUAL_STREAM)
    roots = _roots(cfg, n)
    logger.info("seed-fraction: n=%d steps=%d threshold=%.3f roots=%d", n, steps, threshold, roots.size)

    width = min(n, cfg.r ** min(steps, 64))
    blocks = [roots[rg.start:rg.stop] for rg in _chunks(roots.size, _CELLS_PER_CHUNK // width)]
    sizes = np.concatenate(
        _run_parallel(lambda block: dual_sizes(g, noise, block, steps), blocks, cfg.threads, progress, "roots")
    )

    records = [
        SeedRecord(root=int(x), dual_size=int(size), exceeds=bool(size > threshold))
        for x, size in zip(roots, sizes)
    ]
    hits = sum(rec.exceeds for rec in records)
    summary = {
        "n": n,
        "steps": steps,
        "threshold": threshold,
        "roots": len(records),
        "fraction": hits / len(records),
        "standard_error": analysis.proportion_se(hits, len(records)),
        "rho": rho(OffspringLaw(cfg.q, cfg.r)),
    }
    _emit(sink, "seed_fraction", **summary)
    return ExperimentResult("seed-fraction", SeedRecord.FIELDS, records, summary)


# ----------------------------------------------------------------
# Growth given robustness
# ----------------------------------------------------------------

def _dual_level_sizes(g: InGraph, noise: NoiseField, start: np.ndarray, steps: int) -> List[int]:
    """|hat xi^A_j| for j = 1..steps from A at dual time 0."""
    sizes = []
    support = start
    for t in range(steps):
        support = descendants(g, noise, support, t, 1)
        sizes.append(int(support.size))
    return sizes


def growth_experiment(
    cfg: ExperimentConfig,
    m_grid: Optional[Sequence[int]] = None,
    progress: bool = False,
    sink: EventSink = None,
) -> ExperimentResult:
    """
    For each m: draw A of size m, keep samples whose psi(A) passes the
    sufficient robustness check, run the free dual g steps and count
    |hat xi^A_g| < (1 + delta) m.  The per-level lower bound
    |hat xi^A_j| >= |J(B_{j-1}) & {psi = 0}| is checked on every kept sample.
    """
    params = cfg.psi_params()
    n, spg = cfg.n, cfg.samples_per_graph
    grid = list(m_grid if m_grid is not None else cfg.m_grid)
    for m in grid:
        if m > cfg.epsilon * n:
            raise PreconditionError(f"m={m} exceeds epsilon*n={cfg.epsilon * n:g}")
    logger.info("growth: q=%.4f n=%d m_grid=%s params=%s", cfg.q, n, grid, params)

    def work(item) -> Tuple[int, int, int, int]:
        m, gi, count = item
        g = _graph(cfg, "growth-graph", n, m * 1_000_003 + gi)
        rng = make_rng(cfg.seed, "growth-sets", m, gi)
        noise_seed = derive_seed(cfg.seed, "growth-noise", m)
        accepted = failures = violations = 0
        for s in range(count):
            A = rng.choice(n, size=m, replace=False)
            psi = build_psi(A, g, params)
            if not is_robust_sufficient(psi, params):
                continue
            accepted += 1
            noise = NoiseField(q=cfg.q, seed=noise_seed, stream=DUAL_STREAM, replica=gi * spg + s)
            sizes = _dual_level_sizes(g, noise, psi.z_values[:m], params.g)
            bounds = zero_children_counts(psi, birth_family(psi, noise))
            violations += sum(size < bound for size, bound in zip(sizes, bounds))
            failures += sizes[-1] < (1 + params.delta) * m
        return m, accepted, failures, violations

    items = []
    for m in grid:
        for gi, rg in enumerate(_chunks(cfg.trials, spg)):
            items.append((m, gi, len(rg)))
    parts = _run_parallel(work, items, cfg.threads, progress, "growth")

    records: List[GrowthRecord] = []
    for m in grid:
        mine = [p for p in parts if p[0] == m]
        rec = GrowthRecord(
            m=m,
            samples=cfg.trials,
            accepted=sum(p[1] for p in mine),
            failures=sum(p[2] for p in mine),
            chain_violations=sum(p[3] for p in mine),
        )
        if rec.acceptance_rate < 0.5:
            logger.warning(
                "growth: m=%d acceptance rate %.2f < 0.5 (n too small for this m and g)",
                m, rec.acceptance_rate,
            )
        _emit(sink, "grid_point", m=m, failure_frequency=rec.failure_frequency,
              acceptance_rate=rec.acceptance_rate)
        records.append(rec)

    rate = chernoff_rate(params.q_tilde, cfg.q) if params.q_tilde < cfg.q else math.nan
    freqs = [rec.failure_frequency for rec in records]
    summary = {
        "q_tilde": params.q_tilde,
        "delta": params.delta,
        "g": params.g,
        "failure_frequency": freqs,
        "strictly_decreasing": all(b < a for a, b in zip(freqs, freqs[1:])),
        "chain_violations": sum(rec.chain_violations for rec in records),
        "root_rate": rate,
        "level_rate": rate * (params.q_tilde * cfg.r - 1 - params.delta),
    }
    return ExperimentResult("growth", GrowthRecord.FIELDS, records, summary)


# ----------------------------------------------------------------
# Marks in psi(A)
# ----------------------------------------------------------------

def psi_ones_experiment(
    cfg: ExperimentConfig,
    progress: bool = False,
    sink: EventSink = None,
) -> ExperimentResult:
    """
    Statistics of d = number of ones in psi(A) over random (graph, A), with
    marginal frequencies at ``cfg.positions`` fixed non-root positions and
    the joint frequency of the first two.
    """
    params = cfg.psi_params()
    n, m, spg = cfg.n, cfg.m, cfg.samples_per_graph
    if m > cfg.epsilon * n:
        raise PreconditionError(f"m={m} exceeds epsilon*n={cfg.epsilon * n:g}")
    shape = TreeShape(m, cfg.r, params.g)
    if shape.size == m:
        raise PreconditionError("psi-ones needs g >= 1")
    rng = make_rng(cfg.seed, "psi-positions")
    k = min(cfg.positions, shape.size - m)
    fixed = np.sort(rng.choice(np.arange(m, shape.size), size=k, replace=False))
    pair = fixed[:2]
    logger.info("psi-ones: n=%d m=%d g=%d |T_m|=%d positions=%d", n, m, params.g, shape.size, k)

    def work(item) -> Tuple[np.ndarray, int, List[int]]:
        gi, count = item
        g = _graph(cfg, "psi-graph", n, gi)
        sets = make_rng(cfg.seed, "psi-sets", gi)
        ones = np.zeros(k, dtype=np.int64)
        joint = 0
        ds: List[int] = []
        for _ in range(count):
            psi = build_psi(sets.choice(n, size=m, replace=False), g, params)
            ones += psi.bits[fixed]
            joint += int(pair.size == 2 and psi.bits[pair].all())
            ds.append(psi.d)
        return ones, joint, ds

    items = [(gi, len(rg)) for gi, rg in enumerate(_chunks(cfg.trials, spg))]
    parts = _run_parallel(work, items, cfg.threads, progress, "psi")
    ones = sum(p[0] for p in parts)
    joint = sum(p[1] for p in parts)
    ds = [d for p in parts for d in p[2]]

    bound = psi_marginal_bound(m, cfg.r, params.g, n)
    records = [
        PsiOnesRecord(
            sigma=format_sigma(shape.sigma(int(pos))),
            level=shape.level_of(int(pos)),
            ones=int(count),
            trials=cfg.trials,
            bound=bound,
        )
        for pos, count in zip(fixed, ones)
    ]
    d_stats = analysis.mean_and_se(ds)
    summary = {
        "tree_size": shape.size,
        "marginal_bound": bound,
        "mean_d": d_stats["mean"],
        "d_standard_error": d_stats["se"],
        "mean_d_bound": shape.size * bound,
        "zero_d_frequency": sum(d == 0 for d in ds) / len(ds),
        "not_sufficient_frequency": sum(d > (1 + params.delta) * m for d in ds) / len(ds),
        "max_marginal_frequency": max(rec.frequency for rec in records),
        "max_marginal_se": max(analysis.proportion_se(rec.ones, rec.trials) for rec in records),
        "joint_sigmas": [format_sigma(shape.sigma(int(p))) for p in pair],
        "joint_frequency": joint / cfg.trials,
        "joint_standard_error": analysis.proportion_se(joint, cfg.trials),
        "joint_bound": bound**2,
    }
    _emit(sink, "psi_ones", mean_d=summary["mean_d"], joint_frequency=summary["joint_frequency"])
    return ExperimentResult("psi-ones", PsiOnesRecord.FIELDS, records, summary)


# ----------------------------------------------------------------
# Proof ladder
# ----------------------------------------------------------------

def proof_ladder(
    cfg: ExperimentConfig,
    x: int,
    g: Optional[InGraph] = None,
    noise: Optional[NoiseField] = None,
    params: Optional[PsiParams] = None,
) -> LadderTrace:
    """
    zeta_0 = first alpha_0 vertices of hat xi^x_{s_0};
    zeta_{i+1} = first alpha_{i+1} descendants of zeta_i over g steps,
    with s_i = ceil(a log n) + i g and alpha_i = min(floor(n^b) + i, floor(epsilon n)).
    Stops at extinction, the first failed rung, saturation of alpha, or i_cap rungs.
    """
    n = cfg.n
    g = g if g is not None else _graph(cfg, "graph", n, 0)
    noise = noise if noise is not None else NoiseField(
        q=cfg.q, seed=derive_seed(cfg.seed, "dual-noise", n), stream=DUAL_STREAM
    )
    params = params if params is not None else cfg.psi_params()
    if not 0 <= x < g.n:
        raise PreconditionError(f"root {x} outside V_n")

    s0 = math.ceil(cfg.a * math.log(n))
    seed_size = n ** cfg.b
    alpha_cap = math.floor(cfg.epsilon * n)
    trace = LadderTrace(root=int(x))

    support = descendants(g, noise, np.array([x]), 0, s0)
    h = bool(support.size > seed_size)
    trace.rungs.append(LadderRung(
        root=int(x), rung=-1, time=s0, alpha=None, zeta_size=0, ones=None,
        robust_sufficient=None, descendants=int(support.size), growth_ok=None, h_chain=h,
    ))
    if not h:
        trace.status = "extinct" if support.size == 0 else "seed-too-small"
        return trace

    time = s0
    for i in range(cfg.i_cap):
        alpha = min(math.floor(seed_size) + i, alpha_cap)
        zeta = support[:alpha]
        psi = build_psi(zeta, g, params)
        robust = is_robust_sufficient(psi, params)
        nxt = descendants(g, noise, zeta, time, params.g)
        grew = bool(nxt.size >= (1 + params.delta) * zeta.size)
        h = h and robust and grew
        time += params.g
        trace.rungs.append(LadderRung(
            root=int(x), rung=i, time=time, alpha=alpha, zeta_size=int(zeta.size), ones=psi.d,
            robust_sufficient=robust, descendants=int(nxt.size), growth_ok=grew, h_chain=h,
        ))
        if nxt.size == 0:
            trace.status = "extinct"
            break
        if not h:
            trace.status = "failure"
            break
        if alpha >= alpha_cap:
            trace.status = "saturated"
            break
        support = nxt
    else:
        trace.status = "cap"
    return trace


def ladder_experiment(
    cfg: ExperimentConfig,
    progress: bool = False,
    sink: EventSink = None,
) -> ExperimentResult:
    """proof_ladder for a sample of roots on one graph and one dual noise field."""
    n = cfg.n
    g = _graph(cfg, "graph", n, 0)
    noise = NoiseField(q=cfg.q, seed=derive_seed(cfg.seed, "dual-noise", n), stream=DUAL_STREAM)
    params = cfg.psi_params()
    roots = _roots(cfg, n, default=_LADDER_DEFAULT_ROOTS)
    logger.info("ladder: n=%d roots=%d params=%s", n, roots.size, params)

    traces = _run_parallel(
        lambda x: proof_ladder(cfg, int(x), g, noise, params), list(roots), cfg.threads, progress, "ladder"
    )
    for trace in traces:
        _emit(sink, "ladder", root=trace.root, status=trace.status, rungs_passed=trace.rungs_passed)

    seeded = [t for t in traces if t.seeded]
    sustained = [
        t for t in seeded
        if t.rungs_passed >= _LADDER_SUSTAIN_RUNGS or t.status in ("saturated", "cap") and t.rungs[-1].h_chain
    ]
    statuses: Dict[str, int] = {}
    for t in traces:
        statuses[t.status] = statuses.get(t.status, 0) + 1
    summary = {
        "roots": len(traces),
        "seeded": len(seeded),
        "seeded_fraction": len(seeded) / len(traces),
        "sustained_fraction": len(sustained) / len(seeded) if seeded else math.nan,
        "statuses": ", ".join(f"{k}={v}" for k, v in sorted(statuses.items())),
        "rho": rho(OffspringLaw(cfg.q, cfg.r)),
    }
    records = [rung for trace in traces for rung in trace.rungs]
    return ExperimentResult("ladder", LadderRung.FIELDS, records, summary)


# ----------------------------------------------------------------
# Monotone coupling in q
# ----------------------------------------------------------------

def monotone_coupling_check(
    cfg: ExperimentConfig,
    q_values: Sequence[float],
    progress: bool = False,
    sink: EventSink = None,
) -> ExperimentResult:
    """
    Extinction times on one graph with one set of uniforms thresholded at
    each q; raising q can only add births, so times must not decrease.
    """
    if not q_values:
        raise PreconditionError("monotone_coupling_check needs at least one q")
    qs = sorted(float(q) for q in q_values)
    n = cfg.n
    g = _graph(cfg, "coupling-graph", n, 0)
    base = NoiseField(q=qs[0], seed=derive_seed(cfg.seed, "coupling-noise", n))
    full = State.full(n)

    def work(q: float) -> CouplingRecord:
        return CouplingRecord(q=q, extinction_time=first_extinction(g, base.with_q(q), full, cfg.t_max))

    records = _run_parallel(work, qs, cfg.threads, progress, "coupling")
    times = [math.inf if rec.censored else rec.extinction_time for rec in records]
    summary = {
        "n": n,
        "q_values": qs,
        "monotone": analysis.is_non_decreasing(times),
    }
    if not summary["monotone"]:
        logger.error("coupling: extinction times decrease in q: %s", times)
    _emit(sink, "coupling", **summary)
    return ExperimentResult("coupling", CouplingRecord.FIELDS, records, summary)


EXPERIMENTS: Dict[str, Callable[..., ExperimentResult]] = {
    "persistence": persistence_experiment,
    "plateau": density_plateau,
    "seed-fraction": seed_fraction_experiment,
    "growth": growth_experiment,
    "psi-ones": psi_ones_experiment,
    "ladder": ladder_experiment,
    "subcritical": subcritical_experiment,
}
