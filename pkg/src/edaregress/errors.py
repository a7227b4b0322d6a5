"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
anything else derived from EdaRegressError -> 4.
"""


class EdaRegressError(Exception):
    exit_code = 4


class ConfigError(EdaRegressError):
    exit_code = 2


class DataError(EdaRegressError):
    exit_code = 3


class UnknownToken(DataError):
    pass


class OutOfRange(DataError):
    pass


class NotFinite(DataError):
    pass


class MalformedNotation(DataError):
    pass


class SchemaViolation(DataError):
    pass


class ContextOverflow(DataError):
    pass


class EmptySplit(DataError):
    pass


class SequenceTooLong(EdaRegressError):
    pass


class EmptyMask(EdaRegressError):
    pass


class NonFiniteLoss(EdaRegressError):
    pass


class NoAdapters(EdaRegressError):
    pass


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class DegenerateInput(ValueError):
    """Correlation is undefined because one input is constant."""
