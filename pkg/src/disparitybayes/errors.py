"""Exception and warning types raised across the package."""


class DisparityBayesError(Exception):
    """Base class for all package errors."""


class DegenerateData(DisparityBayesError, ValueError):
    """Data carry no spread (e.g. all values equal)."""


class InsufficientData(DisparityBayesError, ValueError):
    """Too few observations for the requested estimate."""


class DegenerateConditioning(DisparityBayesError, ValueError):
    """Covariate kernel weights vanish at the query point."""


class InvalidParam(DisparityBayesError, ValueError):
    """Parameter outside the model's constrained space."""


class InvalidLevel(DisparityBayesError, ValueError):
    """Contamination level outside (0, 1)."""


class NonConvergence(DisparityBayesError, RuntimeError):
    """Adaptive quadrature or an optimizer did not converge."""


class NoConvergence(NonConvergence):
    """Optimizer hit its iteration cap."""


class InitInvalid(DisparityBayesError, ValueError):
    """Sampler started at a point with non-finite log target."""


class EmptyChain(DisparityBayesError, ValueError):
    """No draws left after burn-in and thinning."""


class BandwidthFallbackWarning(UserWarning):
    """Sheather-Jones found no root; Silverman's rule was used instead."""


class StuckChainWarning(UserWarning):
    """Metropolis acceptance rate fell below 1%."""
