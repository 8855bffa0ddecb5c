"""Exception types shared across the package."""


class SkipTrackError(Exception):
    """Base class for all package-specific errors."""


class EmptyIndividualError(SkipTrackError):
    """An individual contributed zero cycles."""


class NonPositiveCycleError(SkipTrackError):
    """A cycle length is zero, negative, or non-finite."""


class DimensionMismatchError(SkipTrackError):
    """Covariate vectors disagree with the declared dimensions."""


class NonFiniteCovariateError(SkipTrackError):
    """A covariate contains NaN or infinity."""


class DivergentLinkValueError(SkipTrackError):
    """A log-link linear predictor overflows exp()."""


class NonFiniteLogDensityError(SkipTrackError):
    """A log-density term evaluated to NaN or the state is invalid."""


class DegenerateRateError(SkipTrackError):
    """A Gamma full conditional produced a non-positive rate."""


class SingularPrecisionError(SkipTrackError):
    """A conditional precision matrix could not be factorized."""


class ImproperConditionalError(SkipTrackError):
    """A full conditional is improper for the given data (e.g. n < 2)."""


class InsufficientDataError(SkipTrackError):
    """Too few individuals for the requested estimation step."""


class InsufficientChainsError(SkipTrackError):
    """A diagnostic requires more chains than were provided."""


class LengthMismatchError(SkipTrackError):
    """Two vectors that must align have different lengths."""


class TooManyPartitionsError(SkipTrackError):
    """Requested more data subsets than there are individuals."""


class ChainFailureError(SkipTrackError):
    """A sampling chain failed; carries the chain index and iteration."""

    def __init__(self, message: str, chain_index: int, iteration: int | None = None):
        super().__init__(message)
        self.chain_index = chain_index
        self.iteration = iteration
