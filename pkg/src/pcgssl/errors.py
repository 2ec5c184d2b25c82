"""Exception hierarchy.

Everything raised on purpose by the package derives from ``PcgSslError`` so
the CLI can turn it into a one-line diagnostic instead of a traceback.
"""


class PcgSslError(Exception):
    """Base class for all package errors."""


class DataError(PcgSslError):
    """Problem with input data (files, labels, layouts)."""


class MalformedHeader(DataError):
    pass


class UnknownLocationCode(DataError):
    pass


class MissingMandatoryAnnotation(DataError):
    pass


class ContradictoryLabels(DataError):
    pass


class UnsupportedEncoding(DataError):
    pass


class TruncatedFile(DataError):
    pass


class StratumTooSmall(DataError):
    pass


class UnsupportedRate(DataError):
    pass


class MissingLabel(DataError):
    pass


class EmptyDataset(DataError):
    pass


class NoWindows(DataError):
    pass


class InvalidCutoff(PcgSslError, ValueError):
    pass


class ShapeMismatch(PcgSslError, ValueError):
    pass


class NonFiniteGradient(PcgSslError, ArithmeticError):
    pass


class DegenerateEmbedding(PcgSslError, ArithmeticError):
    pass


class StepOutOfRange(PcgSslError, ValueError):
    pass


class UnfrozenBackbone(PcgSslError):
    pass


class EmptyMatrix(PcgSslError, ValueError):
    pass


class ConfigError(PcgSslError):
    """Invalid or inconsistent run configuration."""


class CheckpointError(DataError):
    pass
