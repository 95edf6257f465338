"""Exception hierarchy.

Everything raised on bad data or a violated contract derives from
``ReIDError`` so the CLI can map it to exit code 2 in one place.
"""


class ReIDError(ValueError):
    pass


class DimensionError(ReIDError):
    pass


class ConfigurationError(ReIDError):
    pass


class EmptyInputError(ReIDError):
    pass


class EmptyTrackletError(EmptyInputError):
    pass


class DegenerateAverageError(ReIDError):
    pass


class ContractViolation(ReIDError):
    pass


class InsufficientDataError(ReIDError):
    pass


class SplitInfeasibleError(ReIDError):
    pass


class CalibrationError(ReIDError):
    pass


class MetricUndefinedError(ReIDError):
    pass


class MissingGroundTruthError(ReIDError):
    pass


class PartitionMismatchError(ReIDError):
    pass


class FormatError(ReIDError):
    """A file failed to parse: bad magic, version, length or checksum."""
