"""Exception hierarchy shared by all pipeline stages."""


class TissuevoError(Exception):
    """Base class; ``exit_code`` drives the CLI's return value."""

    exit_code = 3


class ValidationError(TissuevoError):
    exit_code = 2


class ConfigError(ValidationError):
    pass


class ConfigConflict(ValidationError):
    pass


class DataError(TissuevoError):
    exit_code = 3


class UnsupportedFormat(DataError):
    pass


class CorruptFile(DataError):
    pass


class InvalidData(DataError):
    pass


class IoError(DataError):
    pass


class AnnotationConflict(DataError):
    pass


class GeometryError(DataError):
    pass


class EmptyRoi(DataError):
    pass


class DegenerateGlcm(DataError):
    pass


class SingleLevel(DataError):
    pass


class EmptySample(DataError):
    pass


class EmptyGroup(DataError):
    pass


class TooSmall(DataError):
    pass


class DegenerateSample(DataError):
    pass


class InvalidFamily(DataError):
    pass


class ZeroVector(DataError):
    pass


class NumericalFailure(DataError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
