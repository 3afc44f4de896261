"""Exception hierarchy shared by every subpackage.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3 and leakage failures exit 4.
"""


class VolclfError(Exception):
    exit_code = 1


class ConfigurationError(VolclfError, ValueError):
    exit_code = 2


class DataError(VolclfError, ValueError):
    exit_code = 3


class DimensionError(DataError):
    """Operand shapes are incompatible."""


class ShapeError(ConfigurationError):
    """An architecture collapses a spatial extent below 1."""

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


class FormatError(DataError):
    """A file does not follow its declared on-disk format."""


class CorruptionError(DataError):
    """Internal bookkeeping (e.g. pooling indices) is inconsistent."""


class UsageError(VolclfError, RuntimeError):
    pass


class TransferError(ConfigurationError):
    pass


class MatchingError(DataError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class LeakageError(VolclfError):
    exit_code = 4

    def __init__(self, message: str, evidence=()):
        super().__init__(message)
        self.evidence = tuple(evidence)
