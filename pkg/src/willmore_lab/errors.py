"""Exception hierarchy shared by all modules."""


class WillmoreLabError(Exception):
    """Base class for every error raised by this package."""


class OutOfChart(WillmoreLabError, ValueError):
    """A point lies outside the validity region of the ambient chart."""


class RadiusExceedsInjectivity(WillmoreLabError, ValueError):
    pass


class NoConvergence(WillmoreLabError, RuntimeError):
    pass


class DegenerateTriangle(WillmoreLabError, ValueError):
    pass


class InvalidMesh(WillmoreLabError, ValueError):
    """Connectivity violates the closed / oriented / connected contract."""


class NonFiniteInput(WillmoreLabError, ValueError):
    pass


class RankDeficientFit(WillmoreLabError, RuntimeError):
    pass


class StepFailure(WillmoreLabError, RuntimeError):
    def __init__(self, message, cause=None):
        super().__init__(message)
        self.cause = cause


class NonNegativityViolated(WillmoreLabError, ValueError):
    pass


class ConnectivityChanged(WillmoreLabError, ValueError):
    pass


class InsufficientData(WillmoreLabError, ValueError):
    pass


class BadParams(WillmoreLabError, ValueError):
    pass


class ParseError(WillmoreLabError, ValueError):
    def __init__(self, message, lineno=None):
        super().__init__(message if lineno is None else f"line {lineno}: {message}")
        self.lineno = lineno


class ValidationError(WillmoreLabError, ValueError):
    """Aggregates every violation found while validating a config."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SchemaMismatch(WillmoreLabError, ValueError):
    pass


class IoError(WillmoreLabError, OSError):
    """A file could not be read or written."""


class SnapshotNotFound(IoError, FileNotFoundError):
    pass
