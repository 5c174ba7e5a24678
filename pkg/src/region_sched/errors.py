"""Exception taxonomy shared across the engine.

The CLI maps these onto exit codes: parameter/config problems exit 2,
numeric failures during sampling exit 3, trace-manifest problems exit 4.
"""


class RegionSchedError(Exception):
    """Base class for all engine errors."""


class ParameterError(RegionSchedError):
    """A value violates a documented precondition or type invariant."""


class ScheduleError(ParameterError):
    """A noise schedule is malformed (non-monotone, zero interval, ...)."""


class ConfigError(ParameterError):
    """A config file field is unknown or invalid; carries its field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class HistoryError(RegionSchedError):
    """A per-pixel history was used or updated out of contract."""


class NumericError(RegionSchedError):
    """Non-finite values appeared during sampling; carries the step index."""

    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"step {step}: {message}")


class FormatError(RegionSchedError):
    """An array container on disk violates the file format contract."""


class ManifestError(RegionSchedError):
    """A trace manifest is missing, inconsistent, or points at bad files."""
