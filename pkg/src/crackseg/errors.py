"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
BackendError -> 3.
"""


class CrackSegError(Exception):
    """Base class for all package errors."""


class ConfigError(CrackSegError):
    """Invalid configuration or parameter value."""


class DataError(CrackSegError):
    """Bad input data: dimension mismatch, unreadable file, empty dataset."""


class BackendError(CrackSegError):
    """A model backend failed. Carries the pipeline stage where it happened."""

    def __init__(self, message, stage=None):
        super().__init__(message if stage is None else f"[{stage}] {message}")
        self.stage = stage
