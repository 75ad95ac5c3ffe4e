"""Exception hierarchy shared by all pipeline stages.

Each exception maps onto one of the CLI exit codes: data problems exit 1,
configuration or compatibility problems exit 2, numerical failures exit 3.
"""


class PdMotorError(Exception):
    exit_code = 1


class DataError(PdMotorError):
    exit_code = 1


class ConfigError(PdMotorError):
    exit_code = 2


class NumericalError(PdMotorError):
    exit_code = 3


# ingest
class MalformedRow(DataError):
    def __init__(self, path, row, reason):
        self.path = str(path)
        self.row = row
        super().__init__(f"{path}: row {row}: {reason}")


class EmptyRecording(DataError):
    pass


class NonMonotoneTimestamps(DataError):
    pass


class InvalidLabel(DataError):
    pass


class DuplicateWindow(DataError):
    pass


class EmptyDataset(DataError):
    pass


class SubjectMismatch(DataError):
    pass


# dsp
class InvalidSpec(ConfigError):
    pass


class SignalTooShort(DataError):
    pass


class DecompositionTooDeep(DataError):
    pass


class LengthMismatch(DataError):
    pass


# features
class InsufficientData(DataError):
    pass


class FeatureComputationFailed(NumericalError):
    def __init__(self, index, name=None):
        self.index = index
        label = f" ({name})" if name else ""
        super().__init__(f"non-finite feature at index {index}{label}")


class LayoutMismatch(ConfigError):
    pass


# gp
class NumericalBreakdown(NumericalError):
    pass


class DimensionMismatch(DataError):
    pass


# hierarchy
class InsufficientTrainingData(DataError):
    pass


class NonFiniteValue(NumericalError):
    pass
