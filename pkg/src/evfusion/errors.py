"""Exception hierarchy shared by all subpackages."""


class FusionError(Exception):
    """Base class for every error raised by evfusion."""


class DimensionError(FusionError, ValueError):
    pass


class InvalidEvidenceError(FusionError, ValueError):
    pass


class TotalConflictError(FusionError, ArithmeticError):
    """Two opinions place all of their belief mass on disjoint classes."""


class DegenerateOpinionError(FusionError, ValueError):
    pass


class InvalidParameterError(FusionError, ValueError):
    pass


class InvalidFeatureError(FusionError, ValueError):
    pass


class CalibrationError(FusionError, ValueError):
    pass


class ParseError(FusionError, ValueError):
    """Malformed input text.

    ``line`` is the 1-based offending line number, or ``None`` when the error
    concerns the document as a whole (e.g. a missing key).
    """

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.message = message


class ConfigError(FusionError, ValueError):
    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)
