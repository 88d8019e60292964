"""
errors.py - custom exceptions used across the pipeline.

Every exception carries the process exit code the CLI maps it to, so callers can
catch the whole family via `PatchHteError` while the command layer turns a
failure into the exit-code contract in one place:

    0 success, 2 usage/schema, 3 data quality, 4 internal invariant violation.

Row-level data problems are *not* exceptions: they are collected as rejects.
"""

from __future__ import annotations


class PatchHteError(RuntimeError):
    """Base class for errors raised by this package."""

    exit_code: int = 4


class ConfigError(PatchHteError):
    """The run configuration is invalid or references missing inputs."""

    exit_code = 2


class SchemaError(PatchHteError):
    """An input file does not carry the expected columns or values."""

    exit_code = 2

    def __init__(self, message: str, *, column: str | None = None) -> None:
        super().__init__(message)
        self.column = column


class IngestionError(PatchHteError):
    """A field that must parse strictly (e.g. a patch version) did not."""

    exit_code = 2


class DataQualityError(PatchHteError):
    """Too many rows were rejected while loading telemetry."""

    exit_code = 3

    def __init__(self, message: str, *, rejects=None) -> None:
        super().__init__(message)
        self.rejects = rejects  # RejectsReport, so callers can still persist it


class FrameError(PatchHteError):
    """A treatment frame cannot be built or is not fittable."""

    exit_code = 2


class InsufficientArmError(PatchHteError):
    """A treatment arm is too small for variance-based inference."""

    exit_code = 2


class TreeError(PatchHteError):
    """A tree operation received inputs that do not match the fitted schema."""

    exit_code = 2


class AnalysisError(PatchHteError):
    """A derived analysis is undefined for the given inputs."""

    exit_code = 2


class SyntheticSpecError(PatchHteError):
    """A synthetic generator spec is malformed (e.g. boxes do not partition)."""

    exit_code = 2


class InvariantError(PatchHteError):
    """An internal invariant was violated; indicates a bug, not bad input."""

    exit_code = 4


__all__ = [
    "PatchHteError",
    "ConfigError",
    "SchemaError",
    "IngestionError",
    "DataQualityError",
    "FrameError",
    "InsufficientArmError",
    "TreeError",
    "AnalysisError",
    "SyntheticSpecError",
    "InvariantError",
]
