"""
Exceptions raised across the evodyn modules.

Bad inputs derive from ValueError, numerical trouble from RuntimeError, so callers
that only know the builtins still catch them.
"""


class EvodynError(Exception):
    """Base class for every evodyn error."""


class DriftExceeded(EvodynError, RuntimeError):
    """A state left the simplex by more than the drift bound (integrator failure)."""


class DimensionMismatch(EvodynError, ValueError):
    pass


class TooManyStrategies(EvodynError, ValueError):
    pass


class SingularSupportSystem(EvodynError, RuntimeError):
    """Support system of the NE enumeration has no unique solution."""


class EmptySet(EvodynError, ValueError):
    pass


class InvalidParameter(EvodynError, ValueError):
    pass


class InvalidRuleSpec(EvodynError, ValueError):
    pass


class InvalidMechanism(EvodynError, ValueError):
    pass


class NoPotentialAvailable(EvodynError, ValueError):
    pass


class NonHermitianForm(EvodynError, RuntimeError):
    """The NI form j(G - G*) came out non-Hermitian: an implementation bug."""


class IntegratorFailure(EvodynError, RuntimeError):
    pass


class EmptyTrajectory(EvodynError, ValueError):
    pass


class ConfigError(EvodynError, ValueError):
    pass
