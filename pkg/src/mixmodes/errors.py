"""Exception types shared across the package."""


class MixModesError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MixModesError, ValueError):
    """An input violates a documented invariant or precondition."""


class DegenerateDataError(MixModesError, ValueError):
    """Data lack the variation required by the requested computation."""


class NumericalError(MixModesError, ArithmeticError):
    """A numerical operation failed on inputs that should be well posed."""


class FitFailureError(MixModesError, RuntimeError):
    """Every attempted mixture fit failed."""
