"""
services/errors.py
------------------
Exception hierarchy shared by the services and the CLI.

The CLI maps each class to an exit code (see app/cli.py); library code only
raises and never prints.
"""


class SimError(Exception):
    """Base class for every error raised on purpose by this package."""

    exit_code = 1


class UsageError(SimError):
    """Bad command-line usage (unknown subcommand, malformed flag value)."""

    exit_code = 1


class ConfigError(SimError, ValueError):
    """Config file parse error, unknown key or type mismatch."""

    exit_code = 1

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PreconditionError(SimError, ValueError):
    """An operation was called outside its domain (e.g. n <= r)."""

    exit_code = 2


class BudgetExceededError(SimError, RuntimeError):
    """Exhaustive search requested on an instance above the size budget."""

    exit_code = 3
