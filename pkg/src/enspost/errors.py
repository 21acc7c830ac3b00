"""Exception hierarchy.

Every exception carries an ``exit_code`` so the command line front end can map
failures onto its documented exit status without string matching.
"""


class EnspostError(Exception):
    exit_code = 2


class UsageError(EnspostError):
    exit_code = 1


class DataError(EnspostError):
    exit_code = 2


class NumericalError(EnspostError):
    exit_code = 3


# data problems
class MissingColumn(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyDataset(DataError):
    pass


class OverlappingRanges(DataError):
    pass


class IoError(DataError):
    """A file could not be read or written."""


class InvalidConfig(UsageError):
    pass


class TooFewSamples(DataError):
    pass


class LengthMismatch(DataError):
    pass


class GridMismatch(DataError):
    pass


class FeatureMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class UnknownStation(DataError):
    pass


class UnknownModel(UsageError):
    pass


class ArtifactFormatError(DataError):
    pass


class EmptyEnsemble(DataError):
    pass


class NonMonotoneQuantiles(DataError):
    pass


class InvalidAlpha(UsageError):
    pass


# numerical problems
class NonPositiveSigma(NumericalError):
    pass


class ZeroReference(NumericalError):
    pass


class ZeroError(NumericalError):
    pass


class NonFiniteLikelihood(NumericalError):
    pass


class DivergedTraining(NumericalError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class DegenerateVariance(NumericalError):
    """Score differences have zero variance.

    ``mean_difference`` tells the caller whether the series were identical
    (0.0) or differ by a constant.
    """

    def __init__(self, message, mean_difference=0.0):
        super().__init__(message)
        self.mean_difference = mean_difference


class NonConvergenceWarning(UserWarning):
    pass
