"""Error hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to: validation
problems exit with 2, runtime failures with 1.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional


class LabError(Exception):
    exit_code: int = 1


class ConfigurationError(LabError, ValueError):
    exit_code = 2


class InputError(LabError, ValueError):
    exit_code = 2


class RecordValidationError(LabError, ValueError):
    exit_code = 2


class BoxParseError(RecordValidationError):
    """Malformed or invariant-violating coordinate text.

    ``position`` is the character offset where the offending tuple starts, or
    the text length when no tuple was found at all.
    """

    def __init__(self, message: str, *, position: int) -> None:
        super().__init__(f"{message} (at position {position})")
        self.position = position


class QueryError(LabError, KeyError):
    exit_code = 2

    def __str__(self) -> str:
        # KeyError quotes its argument; keep messages readable
        return str(self.args[0]) if self.args else ""


class InternalError(LabError, RuntimeError):
    exit_code = 1


class TrainingDivergedError(LabError, RuntimeError):
    exit_code = 1

    def __init__(self, message: str, *, diagnostics_path: Optional[Path] = None) -> None:
        super().__init__(message)
        self.diagnostics_path = diagnostics_path
