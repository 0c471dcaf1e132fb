"""Exceptions raised on numerical failure."""


class NumericalError(RuntimeError):
    """A computation left its domain of validity (divergence, NaN, ...)."""


class MapBuildError(NumericalError):
    pass


class ToleranceError(NumericalError):
    """Adaptive propagation could not meet the requested tolerance."""


class CrossingError(NumericalError):
    """Burgers characteristics crossed: node order was lost."""


class RankDeficientError(NumericalError):
    pass


class TrainingError(NumericalError):
    """Fitting diverged (non-finite loss)."""
