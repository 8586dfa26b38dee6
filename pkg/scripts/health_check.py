#!/usr/bin/env python3
"""
scripts/health_check.py
-----------------------
Pre-flight validation for the contact-process toolkit.

Run via ``python run.py health`` or manually:

    python scripts/health_check.py

Exit codes
----------
  0  All checks passed
  1  One or more checks failed
"""

import importlib
import os
import sys

# ----------------------------------------------------------------
# Ensure project root is on sys.path so local imports work
# ----------------------------------------------------------------
_ROOT = os.path.join(os.path.dirname(__file__), "..")
if _ROOT not in sys.path:
    sys.path.insert(0, _ROOT)

# ----------------------------------------------------------------
# Result tracking
# ----------------------------------------------------------------
_passed: list[str] = []
_failed: list[str] = []


def _report(name: str, ok: bool, detail: str = ""):
    symbol = "OK  " if ok else "FAIL"
    line   = f"[{symbol}] {name}"
    if detail:
        line += f": {detail}"
    print(line)
    (_passed if ok else _failed).append(name)


# ================================================================
# Check 1: Python dependencies
# ================================================================
def check_dependencies():
    packages = {
        "numpy":    "numpy",
        "scipy":    "scipy",
        "joblib":   "joblib",
        "tqdm":     "tqdm",
        "dotenv":   "dotenv",
        "colorama": "colorama",
    }
    missing = []
    for label, module in packages.items():
        try:
            importlib.import_module(module)
        except ImportError:
            missing.append(label)

    if missing:
        _report("Dependencies", False, f"Missing packages: {', '.join(missing)}.  Run: pip install -r requirements.txt")
    else:
        _report("Dependencies", True, f"{len(packages)} packages OK")


# ================================================================
# Check 2: Configuration / environment variables
# ================================================================
def check_config():
    """Returns the Config object if valid, else None."""
    try:
        from conf.config import Config
        cfg = Config.from_env()
        errors = cfg.validate()

        if errors:
            for e in errors:
                _report("Configuration", False, e)
            return None

        _report("Configuration", True, repr(cfg))
        return cfg

    except Exception as exc:
        _report("Configuration", False, str(exc))
        return None


# ================================================================
# Check 3: SQLite ledger (only when enabled)
# ================================================================
def check_database(cfg):
    db_path = cfg.db_path if cfg else ""
    if not db_path:
        _report("SQLite Ledger", True, "disabled (SIM_DB_PATH unset)")
        return

    try:
        from db import Database
        db = Database(db_path)
        if db.verify_schema():
            _report("SQLite Ledger", True, f"Schema OK, {db_path}")
        else:
            _report("SQLite Ledger", False, "Tables missing after schema creation attempt")
        db.close()

    except Exception as exc:
        _report("SQLite Ledger", False, str(exc))


# ================================================================
# Check 4: File system write permissions
# ================================================================
def check_filesystem(cfg):
    dirs = [
        cfg.out_dir if cfg else os.getenv("SIM_OUT_DIR", "output"),
        cfg.logs_dir if cfg else os.getenv("SIM_LOGS_DIR", "logs"),
    ]
    failures = []
    for d in dirs:
        try:
            os.makedirs(d, exist_ok=True)
            marker = os.path.join(d, ".write_check")
            with open(marker, "w") as fh:
                fh.write("ok")
            os.remove(marker)
        except OSError as exc:
            failures.append(f"{d}: {exc}")

    if failures:
        _report("File System", False, " | ".join(failures))
    else:
        _report("File System", True, f"Write OK, {', '.join(dirs)}")


# ================================================================
# Check 5: Duality on a tiny exhaustive instance
# ================================================================
def check_duality():
    try:
        from services.dynamics import State, check_duality as dual_ok
        from services.graph_gen import GraphConfig, generate
        from services.noise import NoiseField

        n, T, trials = 5, 3, 10
        bad = 0
        for trial in range(trials):
            g = generate(GraphConfig(n=n, r=2, seed=trial))
            noise = NoiseField(q=0.6, seed=trial)
            for x in range(n):
                for y in range(n):
                    bad += not dual_ok(g, noise, State.from_support(n, [x]), State.from_support(n, [y]), T)
        _report("Duality", bad == 0, f"{trials * n * n - bad}/{trials * n * n} singleton pairs agree")

    except Exception as exc:
        _report("Duality", False, str(exc))


# ================================================================
# Check 6: Survival probability oracle
# ================================================================
def check_rho():
    try:
        from services.theory import OffspringLaw, rho
        value = rho(OffspringLaw(0.75, 2))
        ok = abs(value - 2.0 / 3.0) < 1e-10
        _report("Rho oracle", ok, f"rho(0.75, 2) = {value:.12f}")

    except Exception as exc:
        _report("Rho oracle", False, str(exc))


# ================================================================
# Entry point
# ================================================================
def run_checks() -> int:
    _passed.clear()
    _failed.clear()
    print("-" * 52)
    print("  Pre-flight Health Check")
    print("-" * 52)

    check_dependencies()
    cfg = check_config()
    check_database(cfg)
    check_filesystem(cfg)
    check_duality()
    check_rho()

    print("-" * 52)
    total = len(_passed) + len(_failed)
    print(f"  {len(_passed)}/{total} checks passed", end="")
    if _failed:
        print(f"  |  Failed: {', '.join(_failed)}")
    else:
        print("  (all good)")
    print("-" * 52)

    return 0 if not _failed else 1


def main():
    sys.exit(run_checks())


if __name__ == "__main__":
    main()
