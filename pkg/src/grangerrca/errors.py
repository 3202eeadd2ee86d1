"""Exception hierarchy shared by all pipeline stages."""


class GrangerRCAError(Exception):
    """Base class for every error raised by the package."""


class IngestError(GrangerRCAError):
    pass


class MalformedRow(IngestError):
    pass


class NonNumericCell(IngestError):
    pass


class MissingValue(IngestError):
    pass


class DuplicateName(IngestError):
    pass


class TooFewSeries(IngestError):
    pass


class ShapeError(GrangerRCAError, ValueError):
    pass


class UnsupportedPrimitive(GrangerRCAError, TypeError):
    pass


class NonFiniteError(GrangerRCAError, FloatingPointError):
    """A loss or gradient became NaN/inf during training."""


class ConvergenceError(GrangerRCAError, RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"power iteration did not converge after {iterations} iterations "
                         f"(L1 residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


class UnknownNode(GrangerRCAError, KeyError):
    def __str__(self):
        return f"unknown node: {self.args[0]!r}"


class ConfigError(GrangerRCAError, ValueError):
    pass


class StageError(GrangerRCAError):
    """Failure inside one pipeline stage; ``cause`` is the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
