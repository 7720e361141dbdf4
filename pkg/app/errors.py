"""
Exception hierarchy for the series classifier.
Commands catch SeriesClassifierError and turn it into a nonzero exit status.
"""


class SeriesClassifierError(Exception):
    pass


class DicomDecodeError(SeriesClassifierError):
    """No slice of a series could be decoded"""
    pass


class UnsupportedTransferSyntaxError(DicomDecodeError):
    """Compressed or otherwise non-native pixel encoding"""
    pass


class SchemaValidationError(SeriesClassifierError, ValueError):
    pass


class SchemaMismatchError(SeriesClassifierError):
    """Data, parameters or checkpoint were built for a different tag schema"""
    pass


class NumericError(SeriesClassifierError, ArithmeticError):
    pass


class ConfigurationError(SeriesClassifierError, ValueError):
    pass


class CheckpointFormatError(SeriesClassifierError):
    pass


class LabelError(SeriesClassifierError, ValueError):
    pass


class UndefinedStatisticError(SeriesClassifierError):
    """The statistic has no defined value for the given inputs (e.g. all differences are zero)"""
    pass


class SynthSpecError(SeriesClassifierError, ValueError):
    pass
