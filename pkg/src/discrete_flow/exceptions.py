"""Exception hierarchy shared by all modules."""


class DiscreteFlowError(Exception):
    """Base class for errors raised by this package."""


class DomainError(DiscreteFlowError, ValueError):
    """An argument is outside the domain of the operation."""


class SpaceMismatchError(DomainError):
    """Two objects live on different state spaces."""


class NormalizationError(DiscreteFlowError, ValueError):
    """A distribution failed its normalization or nonnegativity contract."""


class SingularityError(DomainError):
    """Evaluation too close to t = 1 where conditional rates blow up."""


class UndefinedPosteriorError(DomainError):
    """The posterior over X(1) given X(t) = x is undefined because p_t(x) = 0."""


class AbsoluteContinuityError(DiscreteFlowError, ValueError):
    """A jump or Bregman term requires u^Y > 0 where u^X > 0, but u^Y = 0."""


class RateBoundError(DiscreteFlowError, RuntimeError):
    """Total outflow exceeded the dominating rate used for thinning."""


class ConfigError(DiscreteFlowError, ValueError):
    """Invalid experiment configuration."""
