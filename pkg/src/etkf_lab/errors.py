"""Exception hierarchy shared by all modules."""


class EtkfError(Exception):
    """Base class for every error raised by etkf_lab."""


class SizeError(EtkfError, ValueError):
    """Ensemble has fewer than two members."""


class DimensionMismatch(EtkfError, ValueError):
    """Operand shapes are inconsistent."""


class InvalidInflation(EtkfError, ValueError):
    """Inflation factor below one."""


class InvalidNoiseCovariance(EtkfError, ValueError):
    """Noise covariance is not symmetric positive definite."""


class SingularError(EtkfError, ArithmeticError):
    """A factorization that should succeed for valid inputs failed."""


class NotSymmetric(EtkfError, ValueError):
    pass


class EigenFailure(EtkfError, ArithmeticError):
    pass


class CapacityError(EtkfError, ValueError):
    """State dimension too large to materialize an m x m covariance."""


class NonFiniteState(EtkfError, ArithmeticError, ValueError):
    """Integration produced NaN or Inf.

    ``member`` is the index of the first offending ensemble member, or
    ``None`` for a single-state flow.
    """

    def __init__(self, message, member=None):
        super().__init__(message)
        self.member = member


class NotContracting(EtkfError, ValueError):
    """Contraction rate is not below one, so no asymptotic bound exists."""


class ConfigMismatch(EtkfError, ValueError):
    """Run configuration violates the hypotheses of the requested check."""


class ConfigError(EtkfError, ValueError):
    """Malformed or unknown configuration entries."""


class ReplicateFailure(EtkfError, RuntimeError):
    """One or more Monte Carlo replicates aborted.

    ``failed`` lists ``(replicate_id, message)`` pairs; ``traces`` holds every
    trace, including the partial ones.
    """

    def __init__(self, failed, traces):
        self.failed = list(failed)
        self.traces = list(traces)
        ids = ", ".join(str(r) for r, _ in self.failed[:10])
        super().__init__(f"{len(self.failed)} of {len(self.traces)} replicates failed (ids: {ids})")
