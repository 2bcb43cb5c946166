"""Exception hierarchy shared across the package."""


class ITLError(Exception):
    """Base class for all package errors."""


# tabular data
class DataError(ITLError, ValueError):
    pass


class MissingColumn(DataError):
    pass


class UnknownCategory(DataError):
    def __init__(self, feature, value):
        super().__init__(f"unknown category {value!r} for feature {feature!r}")
        self.feature = feature
        self.value = value


class NonNumericValue(DataError):
    def __init__(self, row, feature, value=None):
        super().__init__(f"row {row}: non-numeric value {value!r} for feature {feature!r}")
        self.row = row
        self.feature = feature


class EmptyFile(DataError):
    pass


class EmptyDataset(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# clustering / transfer
class KTooLarge(ITLError, ValueError):
    pass


class EmptyData(ITLError, ValueError):
    pass


class SingleCluster(ITLError, ValueError):
    pass


class NoClusters(ITLError, ValueError):
    pass


# encoder
class ShapeMismatch(ITLError, ValueError):
    pass


class NonFiniteInput(ITLError, ValueError):
    pass


class TooFewInstances(ITLError, ValueError):
    pass


class UntrainedNet(ITLError, RuntimeError):
    pass


# surrogate
class AllZeroWeights(ITLError, ValueError):
    pass


class SingularSystem(ITLError, ArithmeticError):
    pass


# black box
class SingleClassData(ITLError, ValueError):
    pass


# metrics
class LengthMismatch(ITLError, ValueError):
    pass


class ZeroPerturbation(ITLError, ValueError):
    pass


# harness
class InvalidSpec(ITLError, ValueError):
    pass


class ConfigError(ITLError, ValueError):
    pass


class StageError(ITLError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
