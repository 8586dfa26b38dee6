"""
services/noise.py
-----------------
Counter-based randomness.

Every Bernoulli "receives input" bit B^x_t is a pure function of
(key, t, x): the 64-bit counter ``(t << 32) | x`` is pushed through two
rounds of the SplitMix64 finaliser keyed by a per-stream pair of words.
Nothing is stored, so a dual run can read B^x_{T-t} in O(1) and a sparse
step only hashes the vertices it touches.

Keys come from ``numpy.random.SeedSequence`` with stable integer labels
(CRC32 of a stream name plus a replica index), so one top-level seed
reproduces every stream.

The uniforms are thresholded against q (``u < q``).  Raising q on the same
field therefore only ever turns bits on, which is what the monotone
coupling experiment relies on.
"""

import logging
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_MASK32 = (1 << 32) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TO_UNIT = 1.0 / float(1 << 53)


def _label_key(label: int | str) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    if label < 0:
        raise ValueError(f"stream labels must be non-negative, got {label}")
    return int(label)


def derive_seed(seed: int, *labels: int | str) -> int:
    """Derive a 64-bit child seed from ``seed`` and a path of stable labels."""
    ss = np.random.SeedSequence(
        entropy=int(seed), spawn_key=tuple(_label_key(lbl) for lbl in labels)
    )
    return int(ss.generate_state(1, np.uint64)[0])


def make_rng(seed: int, *labels: int | str) -> np.random.Generator:
    """A sequential numpy Generator for sampling that needs no random access."""
    return np.random.default_rng(derive_seed(seed, *labels))


def _mix64(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finaliser, applied elementwise with uint64 wrap-around.
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _hash_uniforms(k0: np.ndarray, k1: np.ndarray, t: int, xs: np.ndarray) -> np.ndarray:
    """Uniforms in [0, 1) for counters (t, xs) under keys (k0, k1) (broadcasting)."""
    if t < 0 or t > _MASK32:
        raise ValueError(f"time index out of range: {t}")
    with np.errstate(over="ignore"):
        counter = (np.uint64(t) << np.uint64(32)) | np.asarray(xs, dtype=np.uint64)
        h = _mix64((counter + k0) * _GOLDEN)
        h = _mix64(h ^ k1)
    return (h >> np.uint64(11)).astype(np.float64) * _TO_UNIT


@dataclass(frozen=True)
class NoiseField:
    """
    The family {B^x_t} for one realisation.

    ``stream`` separates independent uses of the same seed (the primal
    field, the free-running dual field, ...); ``replica`` separates
    Monte Carlo replicates.
    """

    q: float
    seed: int
    stream: str = "primal"
    replica: int = 0
    _keys: tuple = field(init=False, repr=False, compare=False, default=())

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {self.q}")
        ss = np.random.SeedSequence(
            entropy=int(self.seed),
            spawn_key=(_label_key(self.stream), _label_key(self.replica)),
        )
        k0, k1 = ss.generate_state(2, np.uint64)
        object.__setattr__(self, "_keys", (np.uint64(k0), np.uint64(k1)))

    # ----------------------------------------------------------------
    # Access
    # ----------------------------------------------------------------

    def uniforms(self, t: int, xs: np.ndarray | Sequence[int]) -> np.ndarray:
        """The underlying uniform values at time ``t`` for vertices ``xs``."""
        k0, k1 = self._keys
        return _hash_uniforms(k0, k1, t, np.asarray(xs, dtype=np.int64))

    def bits(self, t: int, xs: np.ndarray | Sequence[int]) -> np.ndarray:
        """Boolean B^x_t for every x in ``xs``."""
        return self.uniforms(t, xs) < self.q

    def bit(self, t: int, x: int) -> bool:
        return bool(self.bits(t, np.array([x]))[0])

    def column(self, t: int, n: int) -> np.ndarray:
        """B^x_t for all x in V_n."""
        return self.bits(t, np.arange(n, dtype=np.int64))

    def reversed_column(self, horizon: int, t: int, n: int) -> np.ndarray:
        """The reversed field hat B^{x,T}_t = B^x_{T-t}."""
        return self.column(horizon - t, n)

    # ----------------------------------------------------------------
    # Derived fields
    # ----------------------------------------------------------------

    def with_q(self, q: float) -> "NoiseField":
        """Same uniforms, different threshold (monotone coupling in q)."""
        return replace(self, q=q)

    def for_stream(self, stream: str, replica: int | None = None) -> "NoiseField":
        return NoiseField(
            q=self.q,
            seed=self.seed,
            stream=stream,
            replica=self.replica if replica is None else replica,
        )

    @property
    def key_words(self) -> tuple:
        return self._keys


class NoiseBatch:
    """
    Several fields with a common q evaluated together.

    Row i of ``bits(t, n)`` equals ``fields[i].column(t, n)``; this is the
    hot loop of the replicate ensemble.
    """

    def __init__(self, fields: Sequence[NoiseField]):
        if not fields:
            raise ValueError("NoiseBatch needs at least one field")
        self.q = fields[0].q
        if any(f.q != self.q for f in fields):
            raise ValueError("NoiseBatch needs fields with a common q")
        self._k0 = np.array([f.key_words[0] for f in fields], dtype=np.uint64)
        self._k1 = np.array([f.key_words[1] for f in fields], dtype=np.uint64)

    def __len__(self) -> int:
        return self._k0.size

    def bits(self, t: int, n: int, rows: np.ndarray | None = None) -> np.ndarray:
        k0, k1 = self._k0, self._k1
        if rows is not None:
            k0, k1 = k0[rows], k1[rows]
        xs = np.arange(n, dtype=np.uint64)[None, :]
        return _hash_uniforms(k0[:, None], k1[:, None], t, xs) < self.q


def batch_bits(fields: Sequence[NoiseField], t: int, n: int) -> np.ndarray:
    """B^x_t for several fields at once, shape (len(fields), n)."""
    if not fields:
        return np.zeros((0, n), dtype=bool)
    return NoiseBatch(fields).bits(t, n)


def replica_fields(q: float, seed: int, replicas: Iterable[int], stream: str = "primal") -> list:
    """One field per replicate index, all sharing (q, seed, stream)."""
    return [NoiseField(q=q, seed=seed, stream=stream, replica=int(i)) for i in replicas]
