"""
conf/config.py
--------------
Centralised configuration.

``Config`` holds runtime settings loaded from environment variables / .env
file (all prefixed SIM_).  ``ExperimentConfig`` holds every simulation
knob and is resolved by ``load_config`` with the precedence

    defaults < config file < SIM_* environment < command-line flags
"""

import math
import os
from dataclasses import asdict, dataclass, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from dotenv import load_dotenv

from services.errors import ConfigError
from services.psi_tree import PsiParams, default_params, minimal_g

load_dotenv()

ENV_PREFIX = "SIM_"


def _env_bool(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


@dataclass
class Config:
    # --- Reproducibility ---
    seed: int

    # --- Storage ---
    out_dir: str
    logs_dir: str
    db_path: str                 # "" disables the SQLite ledger

    # --- Execution ---
    threads: int
    log_level: str
    progress: bool               # tqdm bars on stderr
    exact_budget: int            # max |T_m| for exhaustive robustness

    # ----------------------------------------------------------------
    # Factory
    # ----------------------------------------------------------------

    @classmethod
    def from_env(cls) -> "Config":
        return cls(
            seed=int(os.getenv("SIM_SEED", "0")),
            out_dir=os.getenv("SIM_OUT_DIR", "output"),
            logs_dir=os.getenv("SIM_LOGS_DIR", "logs"),
            db_path=os.getenv("SIM_DB_PATH", ""),
            threads=int(os.getenv("SIM_THREADS", "1")),
            log_level=os.getenv("SIM_LOG_LEVEL", "INFO").upper(),
            progress=_env_bool("SIM_PROGRESS"),
            exact_budget=int(os.getenv("SIM_EXACT_BUDGET", "24")),
        )

    # ----------------------------------------------------------------
    # Validation
    # ----------------------------------------------------------------

    def validate(self) -> List[str]:
        """Return a list of human-readable error strings; empty = valid."""
        errors: List[str] = []

        if not 0 <= self.seed < 2**64:
            errors.append("SIM_SEED must be a 64-bit unsigned integer")

        if self.threads < 1:
            errors.append("SIM_THREADS must be >= 1")

        if self.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            errors.append(f"SIM_LOG_LEVEL must be a logging level name (got {self.log_level!r})")

        if self.exact_budget < 1:
            errors.append("SIM_EXACT_BUDGET must be >= 1")

        return errors

    def __repr__(self) -> str:
        return (
            f"Config(seed={self.seed}, out_dir={self.out_dir!r}, "
            f"threads={self.threads}, db={'on' if self.db_path else 'off'})"
        )


# ----------------------------------------------------------------
# Experiment knobs
# ----------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    q: float = 0.75
    r: int = 2
    n: int = 10_000
    n_grid: Tuple[int, ...] = (5, 10, 15, 20, 25)
    m: int = 10
    m_grid: Tuple[int, ...] = (20, 40, 80)
    trials: int = 200
    t_max: int = 100_000
    seed: int = 0
    # psi overrides; None = default_params(q, r)
    q_tilde: Optional[float] = None
    delta: Optional[float] = None
    g: Optional[int] = None
    # seed fraction / ladder
    a: float = 2.0
    b: float = 0.5
    epsilon: float = 0.05
    i_cap: int = 10_000
    roots: Optional[int] = None        # None = every vertex
    # plateau window
    burn_in: Optional[int] = None      # None = max(50, 5 log n)
    window_end: int = 500
    # sampling
    samples_per_graph: int = 10
    positions: int = 20
    threads: int = 1

    @property
    def regime(self) -> str:
        mean = self.q * self.r
        if math.isclose(mean, 1.0):
            return "critical"
        return "supercritical" if mean > 1 else "subcritical"

    @property
    def resolved_burn_in(self) -> int:
        if self.burn_in is not None:
            return self.burn_in
        return max(50, math.ceil(5 * math.log(self.n)))

    def psi_params(self) -> PsiParams:
        """default_params(q, r) with any explicit overrides applied."""
        if self.q_tilde is not None and self.delta is not None and self.g is not None:
            return PsiParams(q_tilde=self.q_tilde, delta=self.delta, g=self.g)
        base = default_params(self.q, self.r) if self.q * self.r > 1 else None
        q_tilde = self.q_tilde if self.q_tilde is not None else getattr(base, "q_tilde", None)
        if q_tilde is None:
            raise ConfigError("q_tilde must be given when q*r <= 1")
        delta = self.delta
        if delta is None:
            delta = min(q_tilde * self.r - 1.0, 1.0) / 2.0
        g = self.g if self.g is not None else minimal_g(q_tilde, delta, self.r)
        return PsiParams(q_tilde=q_tilde, delta=delta, g=g)

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        for key in ("n_grid", "m_grid"):
            out[key] = list(out[key])
        return out

    def validate(self) -> List[str]:
        errors: List[str] = []
        if not 0.0 <= self.q <= 1.0:
            errors.append(f"q must lie in [0, 1] (got {self.q})")
        if self.r < 1:
            errors.append(f"r must be >= 1 (got {self.r})")
        if self.n <= self.r:
            errors.append(f"n must exceed r (got n={self.n}, r={self.r})")
        if any(v <= self.r for v in self.n_grid):
            errors.append("every n in n_grid must exceed r")
        if self.m < 1 or any(v < 1 for v in self.m_grid):
            errors.append("m and m_grid values must be >= 1")
        if self.trials < 1:
            errors.append("trials must be >= 1")
        if self.t_max < 1:
            errors.append("t_max must be >= 1")
        if not 0 <= self.seed < 2**64:
            errors.append("seed must be a 64-bit unsigned integer")
        if self.a <= 0:
            errors.append("a must be > 0")
        if not 0 < self.b < 1:
            errors.append("b must lie in (0, 1)")
        if not 0 < self.epsilon <= 1:
            errors.append("epsilon must lie in (0, 1]")
        if self.i_cap < 1:
            errors.append("i_cap must be >= 1")
        if self.roots is not None and self.roots < 1:
            errors.append("roots must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            errors.append("burn_in must be >= 0")
        if self.window_end < self.resolved_burn_in:
            errors.append("window_end must be >= burn_in")
        if self.samples_per_graph < 1 or self.positions < 1 or self.threads < 1:
            errors.append("samples_per_graph, positions and threads must be >= 1")
        return errors


# ----------------------------------------------------------------
# Parsing
# ----------------------------------------------------------------

def _parse_int(text: str) -> int:
    value = float(text) if any(c in text for c in ".eE") else int(text)
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"not an integer: {text}")
        value = int(value)
    return value


def _parse_int_tuple(text: str) -> Tuple[int, ...]:
    items = [part.strip() for part in text.split(",") if part.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(_parse_int(item) for item in items)


def _optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def inner(text: str) -> Any:
        return None if text.strip().lower() in ("", "none", "auto") else parse(text)
    return inner


_PARSERS: Dict[str, Callable[[str], Any]] = {
    "q": float,
    "r": _parse_int,
    "n": _parse_int,
    "n_grid": _parse_int_tuple,
    "m": _parse_int,
    "m_grid": _parse_int_tuple,
    "trials": _parse_int,
    "t_max": _parse_int,
    "seed": _parse_int,
    "q_tilde": _optional(float),
    "delta": _optional(float),
    "g": _optional(_parse_int),
    "a": float,
    "b": float,
    "epsilon": float,
    "i_cap": _parse_int,
    "roots": _optional(_parse_int),
    "burn_in": _optional(_parse_int),
    "window_end": _parse_int,
    "samples_per_graph": _parse_int,
    "positions": _parse_int,
    "threads": _parse_int,
}


def _normalise_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def parse_config_text(text: str) -> Dict[str, Any]:
    """Parse flat ``key = value`` lines; raises ConfigError naming the line."""
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        key = _normalise_key(key)
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        try:
            values[key] = _PARSERS[key](value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}", line=lineno) from None
    return values


def _env_values(environ: Mapping[str, str]) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for key, parse in _PARSERS.items():
        name = ENV_PREFIX + key.upper()
        if name in environ:
            try:
                values[key] = parse(environ[name])
            except ValueError:
                raise ConfigError(f"bad value in {name}: {environ[name]!r}") from None
    return values


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    """Resolve an ExperimentConfig; ``None`` override values are ignored."""
    values: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        values.update(parse_config_text(text))

    values.update(_env_values(os.environ if environ is None else environ))

    for key, value in (overrides or {}).items():
        key = _normalise_key(key)
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}")
        if value is not None:
            values[key] = tuple(value) if key in ("n_grid", "m_grid") else value

    cfg = ExperimentConfig(**values)
    errors = cfg.validate()
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg
