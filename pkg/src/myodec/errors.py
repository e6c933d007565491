"""Exception hierarchy shared by every myodec module."""


class MyodecError(Exception):
    """Base class for all package errors."""


class ValidationError(MyodecError, ValueError):
    """Input violates a documented precondition."""


# signal
class WindowTooShort(ValidationError):
    pass


class ChannelMismatch(ValidationError):
    pass


class NonMonotoneTimestamps(ValidationError):
    pass


class GapExceedsTolerance(ValidationError):
    pass


class InsufficientHistory(ValidationError):
    pass


class NotFitted(MyodecError):
    pass


class EmptyTrainingSet(ValidationError):
    pass


# kinematics
class DegenerateRange(ValidationError):
    pass


class UncalibratedDof(ValidationError):
    pass


# neural
class ShapeMismatch(ValidationError):
    pass


class NonFiniteLoss(MyodecError, ArithmeticError):
    pass


# models
class SpecMismatch(ValidationError):
    pass


class NotTrained(MyodecError):
    pass


class EmptyDataset(ValidationError):
    pass


class TargetOutOfRange(ValidationError):
    pass


class NoConvergence(MyodecError):
    pass


class UnsupportedModel(ValidationError):
    pass


# metrics
class LengthMismatch(ValidationError):
    pass


class EmptySeries(ValidationError):
    pass


class ConstantTruth(ValidationError):
    pass


class SeriesTooShort(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


# simulator / protocols
class RateMismatch(ValidationError):
    pass


class WrongTrialCount(ValidationError):
    pass


class SessionTooShort(ValidationError):
    pass


class BudgetExceeded(MyodecError):
    pass


# sono
class BadFactor(ValidationError):
    pass


class InsufficientImages(ValidationError):
    pass


class DimMismatch(ValidationError):
    pass


# storage / config
class MissingFile(MyodecError, FileNotFoundError):
    pass


class SchemaMismatch(MyodecError):
    pass


class ChecksumMismatch(MyodecError):
    pass


class VersionMismatch(MyodecError):
    pass


class CorruptCheckpoint(MyodecError):
    pass


class ParseError(ValidationError):
    pass


class UnknownKey(ValidationError):
    pass


class OutOfRangeValue(ValidationError):
    pass


class EmptyReport(ValidationError):
    pass
