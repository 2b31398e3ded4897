"""Exception hierarchy. The CLI maps each family to its own exit code."""


class GBSenseError(Exception):
    pass


class InvalidArgumentError(GBSenseError, ValueError):
    pass


class DegenerateCalibrationError(InvalidArgumentError):
    pass


class ResolutionError(InvalidArgumentError):
    """Time grid too coarse for the pulse shape."""


class NumericError(GBSenseError, ArithmeticError):
    pass


class NumericOverflowError(NumericError):
    pass


class TrainingDivergedError(NumericError):
    def __init__(self, message, last_good=None, report=None):
        super().__init__(message)
        self.last_good = last_good
        self.report = report


class CheckpointError(GBSenseError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class LayoutMismatchError(CheckpointError):
    pass


class DataFormatError(InvalidArgumentError):
    """An input file does not parse; the message names the file."""
