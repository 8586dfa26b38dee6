"""
services/export.py
------------------
Output files: CSV tables, JSONL event streams, run manifests and hex
snapshot dumps.

CSV files use "\\n" line endings and "." decimals regardless of locale;
numbers are formatted by the records themselves so repeated runs give
identical bytes.
"""

import csv
import json
import logging
import os
import threading
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from services.dynamics import Trajectory

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = "1.0.0"

TRAJECTORY_FIELDS = ("t", "occupied")
PSI_FIELDS = ("sigma", "level", "z_value", "psi_bit")


def write_csv(path: str, fields: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> int:
    """Write rows with a fixed header; returns the number of data rows."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
            count += 1
    logger.debug("Wrote %d rows to %s", count, path)
    return count


def trajectory_rows(traj: Trajectory) -> Iterable[Dict[str, int]]:
    return ({"t": rec.t, "occupied": rec.occupied} for rec in traj.records)


def write_snapshots(path: str, traj: Trajectory) -> int:
    """One hex-encoded bit vector per kept snapshot, in time order."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    snaps = traj.snapshots()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for state in snaps:
            fh.write(state.to_hex() + "\n")
    return len(snaps)


class EventWriter:
    """Append-only JSONL sink; safe to call from worker threads."""

    def __init__(self, path: Optional[str]):
        self.path = path
        self._lock = threading.Lock()
        self._fh = None
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8", newline="\n")

    def __call__(self, event: Dict[str, Any]) -> None:
        if self._fh is None:
            return
        line = json.dumps(event, sort_keys=True, default=_json_default)
        with self._lock:
            self._fh.write(line + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "EventWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _json_default(value: Any) -> Any:
    # numpy scalars and arrays
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


@dataclass
class RunManifest:
    subcommand: str
    params: Dict[str, Any]
    seed: int
    argv: List[str]
    outputs: List[str] = field(default_factory=list)
    version: str = ARTIFACT_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default) + "\n"

    def write(self, path: str) -> None:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def read(cls, path: str) -> "RunManifest":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(**data)
