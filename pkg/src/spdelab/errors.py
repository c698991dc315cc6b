"""Exception types shared across the package."""


class PreconditionError(ValueError):
    """A numerical precondition was violated.

    The message names the violated constraint, e.g. ``"gamma must be < beta"``.
    """


class DivergenceError(PreconditionError):
    """A requested quantity is infinite for the given parameters."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or incomplete."""


class QuadratureWarning(RuntimeWarning):
    """Adaptive quadrature stopped before reaching its tolerance."""
