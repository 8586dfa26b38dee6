#!/usr/bin/env python3
"""
run.py
------
Main entry point for the threshold contact process toolkit.

Execution order
---------------
1. Load .env and set up logging (stderr + logs/sim.log).
2. Validate the runtime Config.
3. Hand the remaining arguments to app.cli.cli_main.

Usage
-----
    python run.py rho --q 0.75 --r 2
    python run.py experiment plateau --n 10000 --trials 20
    python run.py health
"""

import logging
import os
import sys

# ----------------------------------------------------------------
# Ensure project root is importable
# ----------------------------------------------------------------
_ROOT = os.path.dirname(os.path.abspath(__file__))
if _ROOT not in sys.path:
    sys.path.insert(0, _ROOT)


def _setup_logging(logs_dir: str, level_name: str = "INFO") -> None:
    os.makedirs(logs_dir, exist_ok=True)
    level = getattr(logging, level_name.upper(), logging.INFO)
    fmt   = "%(asctime)s  %(name)-24s %(levelname)-8s %(message)s"
    handlers = [
        # stdout carries results only
        logging.StreamHandler(sys.stderr),
        logging.FileHandler(os.path.join(logs_dir, "sim.log"), encoding="utf-8"),
    ]
    logging.basicConfig(level=level, format=fmt, handlers=handlers)


# ----------------------------------------------------------------
# Main
# ----------------------------------------------------------------
def main() -> None:
    # Minimal bootstrap so we can read SIM_LOGS_DIR / SIM_LOG_LEVEL before
    # the full Config object is ready.
    from dotenv import load_dotenv
    load_dotenv()

    _setup_logging(os.getenv("SIM_LOGS_DIR", "logs"), os.getenv("SIM_LOG_LEVEL", "INFO"))
    logger = logging.getLogger("run")

    # ---- Config --------------------------------------------------------
    from conf.config import Config
    config = Config.from_env()
    errors = config.validate()
    if errors:
        for err in errors:
            logger.error("Config error: %s", err)
        sys.exit(1)

    logger.debug("Config loaded: %s", config)

    # ---- CLI -----------------------------------------------------------
    from app.cli import cli_main
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
