"""Exception hierarchy.

Data problems map to CLI exit code 3, configuration problems to exit code 2.
"""


class ShiftPIError(Exception):
    pass


class DataError(ShiftPIError):
    pass


class ConfigError(ShiftPIError):
    pass


class MissingColumn(DataError):
    pass


class EmptyDataset(DataError):
    pass


class NonBinaryTreatment(DataError):
    pass


class AllCovariatesDropped(DataError):
    pass


class MissingTreatment(DataError):
    pass


class DegenerateDesign(DataError):
    pass


class SeparableClasses(DataError):
    pass


class NoUsableCovariates(DataError):
    pass


class ZeroConditionalScale(DataError):
    pass


class ZeroCovariateShift(DataError):
    pass


class TooFewRatios(DataError):
    pass


class EmptyInput(DataError):
    pass


class TooFewSamples(DataError):
    pass


class NotConverged(ShiftPIError):
    """Raised only when a solver is asked to be strict about convergence."""
