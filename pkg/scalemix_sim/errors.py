"""Exceptions raised by scalemix_sim.

User-facing problems (bad arguments, bad files, bad config) derive from ValueError;
numerical breakdowns derive from ArithmeticError. The CLI maps the first family to
exit code 1 and the second to exit code 2.
"""


class ScaleMixError(Exception):
    pass


class DomainError(ScaleMixError, ValueError):
    pass


class LayoutError(ScaleMixError, ValueError):
    pass


class RankError(LayoutError):
    pass


class ShapeError(LayoutError):
    pass


class ConfigurationError(ScaleMixError, ValueError):
    pass


class SizeError(ConfigurationError):
    pass


class IngestError(ScaleMixError, ValueError):
    pass


class EmptyBinError(ScaleMixError, ValueError):
    pass


class NumericalError(ScaleMixError, ArithmeticError):
    pass


class EstimationError(NumericalError):
    pass


class DegenerateError(EstimationError):
    pass


class PrecisionError(NumericalError):
    pass


class TrainingError(NumericalError):
    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index
