"""Exception types shared across the package."""


class FluctuaError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FluctuaError):
    """Invalid construction input (grids, scenes, scenario configs)."""


class ModelError(FluctuaError):
    """Physically inadmissible model data, e.g. a non-PSD tensor."""


class ZeroModeError(FluctuaError):
    """Massless 1D kernel evaluated at zero frequency (kappa = 0)."""


class SingularModeError(FluctuaError):
    """Mode matrix with non-positive determinant.

    Signals a non-passive input or a discretization breakdown; carries the
    smallest LU pivot encountered so the caller can see how singular it was.
    """

    def __init__(self, message, smallest_pivot=None):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class DivergentSeriesError(FluctuaError):
    """Susceptibility series requested where its spectral radius is >= 1."""

    def __init__(self, message, spectral_radius=None):
        super().__init__(message)
        self.spectral_radius = spectral_radius


class NumericsError(FluctuaError):
    """Quadrature budget exhausted before reaching the requested tolerance."""

    def __init__(self, message, requested_tol=None, achieved_tol=None):
        super().__init__(message)
        self.requested_tol = requested_tol
        self.achieved_tol = achieved_tol
