"""
db.py
-----
SQLite results ledger.

Design notes:
- Each thread gets its own connection via threading.local() to avoid
  sqlite3's "check_same_thread" restriction.
- Public methods accept plain dicts / records and return plain dicts (no ORM).
- The schema is created automatically on first run.
- CSV files remain the primary artifact; the ledger indexes runs so they
  can be compared across sessions.
"""

import csv
import json
import logging
import os
import sqlite3
import threading
from typing import Dict, Iterable, List, Optional

logger = logging.getLogger(__name__)

_TABLES = {"runs", "persistence_records"}


class Database:
    """Thin wrapper around SQLite providing inserts, reads and CSV export."""

    def __init__(self, db_path: str):
        self.db_path = db_path
        self._local = threading.local()
        db_dir = os.path.dirname(db_path)
        if db_dir:
            os.makedirs(db_dir, exist_ok=True)
        self._create_schema()

    # ----------------------------------------------------------------
    # Connection management
    # ----------------------------------------------------------------

    def _get_conn(self) -> sqlite3.Connection:
        """Return a thread-local SQLite connection, creating it if needed."""
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = sqlite3.connect(self.db_path, check_same_thread=False)
            conn.row_factory = sqlite3.Row
            conn.execute("PRAGMA journal_mode=WAL")   # safe for multi-threaded reads
            conn.execute("PRAGMA foreign_keys=ON")
            self._local.conn = conn
        return conn

    def close(self):
        """Close the thread-local connection if open (useful in tests / cleanup)."""
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None

    # ----------------------------------------------------------------
    # Schema
    # ----------------------------------------------------------------

    def _create_schema(self):
        """Create tables and indexes if they don't exist."""
        conn = sqlite3.connect(self.db_path)
        conn.execute("PRAGMA journal_mode=WAL")

        conn.executescript("""
            CREATE TABLE IF NOT EXISTS runs (
                id           INTEGER PRIMARY KEY AUTOINCREMENT,
                subcommand   TEXT    NOT NULL,
                seed         INTEGER NOT NULL,
                params_json  TEXT    NOT NULL,
                outputs_json TEXT    NOT NULL,
                version      TEXT    NOT NULL,
                created_at   TEXT    NOT NULL DEFAULT (datetime('now'))
            );

            CREATE TABLE IF NOT EXISTS persistence_records (
                id              INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id          INTEGER NOT NULL REFERENCES runs(id) ON DELETE CASCADE,
                n               INTEGER NOT NULL,
                replicate       INTEGER NOT NULL,
                extinction_time INTEGER,            -- NULL = censored at t_max
                censored        INTEGER NOT NULL,   -- 0 | 1
                mean_density    REAL    NOT NULL,
                UNIQUE (run_id, n, replicate)
            );

            CREATE INDEX IF NOT EXISTS idx_records_run ON persistence_records(run_id, n);
        """)

        conn.commit()
        conn.close()

    def verify_schema(self) -> bool:
        """Return True if all required tables exist."""
        conn = sqlite3.connect(self.db_path)
        rows = conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table'"
        ).fetchall()
        conn.close()
        existing = {r[0] for r in rows}
        return _TABLES.issubset(existing)

    # ----------------------------------------------------------------
    # Writes
    # ----------------------------------------------------------------

    def insert_run(self, manifest) -> int:
        """Store a RunManifest; returns the new run id."""
        conn = self._get_conn()
        cur = conn.execute(
            """
            INSERT INTO runs (subcommand, seed, params_json, outputs_json, version)
            VALUES (?, ?, ?, ?, ?)
            """,
            (
                manifest.subcommand,
                int(manifest.seed),
                json.dumps(manifest.params, sort_keys=True, default=str),
                json.dumps(manifest.outputs),
                manifest.version,
            ),
        )
        conn.commit()
        return int(cur.lastrowid)

    def insert_persistence_records(self, run_id: int, records: Iterable) -> int:
        """
        Insert PersistenceRecord-like objects (n, replicate, extinction_time,
        censored, mean_density).  Returns the number of rows inserted.
        """
        rows = [
            (
                run_id,
                rec.n,
                rec.replicate,
                rec.extinction_time,
                int(rec.censored),
                float(rec.mean_density),
            )
            for rec in records
        ]
        conn = self._get_conn()
        try:
            conn.executemany(
                """
                INSERT OR IGNORE INTO persistence_records (
                    run_id, n, replicate, extinction_time, censored, mean_density
                ) VALUES (?, ?, ?, ?, ?, ?)
                """,
                rows,
            )
            conn.commit()
        except sqlite3.Error as exc:
            logger.error("insert_persistence_records failed: %s | run_id=%s", exc, run_id)
            conn.rollback()
            raise
        return len(rows)

    # ----------------------------------------------------------------
    # Reads
    # ----------------------------------------------------------------

    def get_runs(self, limit: int = 50, subcommand: Optional[str] = None) -> List[Dict]:
        """Most recent runs first, with params and outputs decoded."""
        conn = self._get_conn()
        if subcommand:
            rows = conn.execute(
                "SELECT * FROM runs WHERE subcommand = ? ORDER BY id DESC LIMIT ?",
                (subcommand, limit),
            ).fetchall()
        else:
            rows = conn.execute(
                "SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,)
            ).fetchall()

        out = []
        for r in rows:
            row = dict(r)
            row["params"] = json.loads(row.pop("params_json"))
            row["outputs"] = json.loads(row.pop("outputs_json"))
            out.append(row)
        return out

    def get_persistence_records(self, run_id: int, n: Optional[int] = None) -> List[Dict]:
        conn = self._get_conn()
        sql = (
            "SELECT n, replicate, extinction_time, censored, mean_density "
            "FROM persistence_records WHERE run_id = ?"
        )
        params: List = [run_id]
        if n is not None:
            sql += " AND n = ?"
            params.append(n)
        sql += " ORDER BY n, replicate"
        return [dict(r) for r in conn.execute(sql, params).fetchall()]

    # ----------------------------------------------------------------
    # CSV Export
    # ----------------------------------------------------------------

    def export_csv(self, filepath: str, run_id: int) -> int:
        """Write a run's persistence records to CSV. Returns the number of rows written."""
        records = self.get_persistence_records(run_id)
        if not records:
            return 0

        os.makedirs(os.path.dirname(filepath) or ".", exist_ok=True)
        with open(filepath, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(records[0].keys()), lineterminator="\n")
            writer.writeheader()
            writer.writerows(records)

        return len(records)
