"""Exception hierarchy shared by every module."""


class TdseError(Exception):
    """Base class; ``code`` is the machine-readable name used by the CLI."""

    @property
    def code(self) -> str:
        return type(self).__name__


# data-model
class MalformedRow(TdseError):
    def __init__(self, path, line, reason):
        self.path, self.line, self.reason = str(path), line, reason
        super().__init__(f"{path}:{line}: {reason}")


class NonPositivePrice(TdseError):
    pass


class DuplicateDate(TdseError):
    pass


class SeriesTooShort(TdseError):
    pass


class InsufficientHistory(TdseError):
    pass


class EmptyResult(TdseError):
    pass


class MissingSource(TdseError):
    pass


class LengthMismatch(TdseError):
    pass


# neural kernel
class KernelTooLong(TdseError):
    pass


class DegenerateBatch(TdseError):
    pass


class ShapeMismatch(TdseError):
    pass


class EmptySequence(TdseError):
    pass


# spectral clustering
class NonPositiveSigma(TdseError):
    pass


class ZeroDegreeRow(TdseError):
    pass


class ConvergenceFailure(TdseError):
    pass


class TooFewRows(TdseError):
    pass


class RangeTooNarrow(TdseError):
    pass


# extractors / fusion / meta
class EmptyBranch(TdseError):
    pass


class TooFewSamples(TdseError):
    pass


class EmptyEvidenceList(TdseError):
    pass


class InvalidMass(TdseError):
    pass


class EmptyValidation(TdseError):
    pass


class SingleClassTraining(TdseError):
    pass


class KTooLarge(TdseError):
    pass


class NoConvergence(TdseError):
    pass


# evaluation / backtest
class Empty(TdseError):
    pass


class SingleClassLabels(TdseError):
    pass


class ZeroVariance(TdseError):
    pass


class EmptyCurve(TdseError):
    pass


class ConfigError(TdseError):
    pass


class UndefinedPrecision(TdseError):
    pass


class UndefinedRecall(TdseError):
    pass
