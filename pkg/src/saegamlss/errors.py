"""Exception hierarchy shared by all modules."""


class SaeError(Exception):
    """Base class for package errors."""


class DomainError(SaeError, ValueError):
    """Argument outside the support or parameter domain."""


class MomentUndefined(DomainError):
    """Requested moment does not exist for the given parameters."""


class SpecError(SaeError, ValueError):
    """Model specification inconsistent with the data."""


class SupportError(SpecError):
    """Response values outside the support of the chosen family."""


class RankError(SpecError):
    """Design matrix is column rank deficient."""


class NestingError(SaeError, ValueError):
    """Models passed to a likelihood-ratio test are not nested."""


class ConfigError(SaeError, ValueError):
    """Invalid simulation or run configuration."""


class DegenerateError(SaeError, RuntimeError):
    """Too many bootstrap or simulation replicates failed."""


class ConvergenceError(SaeError, RuntimeError):
    """Iterative procedure did not converge.

    ``partial`` carries whatever result was available when iteration stopped
    (a FittedModel for the fitters, ``None`` otherwise).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
