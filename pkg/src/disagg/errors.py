"""Exception types shared across the package."""


class DisaggError(Exception):
    """Base class for all package errors."""


class DomainError(DisaggError, ValueError):
    """Evaluation requested outside the basis domain (no extrapolation)."""


class SpecError(DisaggError, ValueError):
    """Invalid construction arguments (knots, dimensions, config values)."""


class DatasetError(DisaggError, ValueError):
    """Malformed dataset or dataset/config mismatch."""


class NumericalError(DisaggError, RuntimeError):
    """Numerical failure (covariance not factorizable after jitter escalation).

    Carries the curve index and, when raised inside the sampler, the
    iteration at which the chain aborted.
    """

    def __init__(self, message, curve_index=None, iteration=None):
        self.curve_index = curve_index
        self.iteration = iteration
        parts = [message]
        if curve_index is not None:
            parts.append(f"curve_index={curve_index}")
        if iteration is not None:
            parts.append(f"iteration={iteration}")
        super().__init__(" | ".join(parts))
