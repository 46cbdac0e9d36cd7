"""Exception types shared across the package."""


class BlochstabError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(BlochstabError, ValueError):
    """A constructor or operation received an out-of-contract argument."""


class BasisMismatchError(BlochstabError, ValueError):
    """Two objects that must share a dual basis do not."""


class ExcludedThetaError(BlochstabError, ValueError):
    """The quasimomentum lies inside the exclusion ball around a dual-lattice point."""


class NeutralityError(BlochstabError, ValueError):
    """A periodic Poisson solve was fed a charge with a nonzero cell mean."""


class ConvergenceError(BlochstabError, RuntimeError):
    """Iterative solve did not reach the requested residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NotPositiveError(BlochstabError, RuntimeError):
    """The energy block is not positive definite, so the spectral propagator
    is unavailable.  Carries the offending smallest eigenvalue."""

    def __init__(self, message, min_eig=None, theta=None):
        super().__init__(message)
        self.min_eig = min_eig
        self.theta = theta


class NumericError(BlochstabError, RuntimeError):
    """A dense linear-algebra routine failed to converge."""


class ConfigError(BlochstabError, ValueError):
    """A run configuration failed validation (CLI exit code 2)."""
