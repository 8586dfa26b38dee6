"""
services/analysis.py
--------------------
Statistics over experiment records: censored medians, standard errors,
log-slope fits and the plain-text summary block printed by the CLI.

Everything here is pure and returns plain floats / dicts suitable for JSON
serialisation.
"""

import logging
import math
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)


def censored_median(times: Sequence[Optional[int]]) -> float:
    """
    Median extinction time where ``None`` marks a run still alive at t_max.

    Censored runs count as +inf, so the result is inf when at least half
    of the runs were censored.
    """
    if len(times) == 0:
        return math.nan
    values = np.array([math.inf if t is None else float(t) for t in times])
    return float(np.median(values))


def censored_fraction(times: Sequence[Optional[int]]) -> float:
    if len(times) == 0:
        return 0.0
    return sum(t is None for t in times) / len(times)


def mean_and_se(values: Iterable[float]) -> Dict[str, float]:
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return {"mean": math.nan, "se": math.nan, "count": 0}
    se = float(stats.sem(arr)) if arr.size > 1 else math.nan
    return {"mean": float(arr.mean()), "se": se, "count": int(arr.size)}


def proportion_se(successes: int, trials: int) -> float:
    if trials == 0:
        return math.nan
    p = successes / trials
    return math.sqrt(p * (1.0 - p) / trials)


def log_slope(ns: Sequence[float], medians: Sequence[float]) -> Dict[str, float]:
    """Least-squares slope of log(median) against n over finite medians."""
    pairs = [(float(n), float(m)) for n, m in zip(ns, medians) if math.isfinite(m) and m > 0]
    if len(pairs) < 2:
        return {"slope": math.nan, "intercept": math.nan, "points": len(pairs)}
    x, y = zip(*pairs)
    fit = stats.linregress(x, np.log(y))
    return {"slope": float(fit.slope), "intercept": float(fit.intercept), "points": len(pairs)}


def is_strictly_increasing(values: Sequence[float]) -> bool:
    """False as soon as any value is non-finite (a censored median is undetermined)."""
    if not all(math.isfinite(v) for v in values):
        return False
    return all(b > a for a, b in zip(values, values[1:]))



def is_non_decreasing(values: Sequence[float]) -> bool:
    return all(b >= a for a, b in zip(values, values[1:]))


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return str(value)
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return str(value)


def summary_block(title: str, items: Mapping[str, object]) -> str:
    """Aligned ``key : value`` lines under a title rule."""
    width = max((len(k) for k in items), default=0)
    lines: List[str] = [title, "-" * max(len(title), 20)]
    for key, value in items.items():
        lines.append(f"{key.ljust(width)} : {_fmt(value)}")
    return "\n".join(lines)
