"""
Exception hierarchy for fracture-distill.

Every error raised on purpose by the package derives from
FractureDistillError, so the CLI can map failures to exit codes:
ConfigError exits with 2, everything else with 3.
"""

from typing import Any, Dict, Optional


class FractureDistillError(Exception):
    """Base class for all package errors."""


class ConfigError(FractureDistillError):
    """Invalid configuration, CLI input or missing input path."""


class DomainError(FractureDistillError, ValueError):
    """Argument outside the mathematical domain of a function."""


class ShapeError(FractureDistillError, ValueError):
    """Array or image dimensions do not match the contract."""


class ContractError(FractureDistillError):
    """A caller violated an operation's precondition."""


class UndefinedMetricError(FractureDistillError, ValueError):
    """A metric is undefined for the given inputs."""


class NumericalError(FractureDistillError):
    """
    A computation produced non-finite values.

    Carries a diagnostic dict so callers can log what went wrong.
    """

    def __init__(self, message: str, diagnostic: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostic:
            return base
        details = ", ".join(f"{k}={v}" for k, v in sorted(self.diagnostic.items()))
        return f"{base} ({details})"
