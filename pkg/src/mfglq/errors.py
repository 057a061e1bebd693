"""Exception hierarchy shared by all solver modules."""

from __future__ import annotations


class MfglqError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MfglqError, ValueError):
    """A model violates one or more of its invariants.

    ``violations`` holds :class:`mfglq.model.Violation` records, each naming
    the offending field.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(str(v) for v in self.violations)
        super().__init__(msg or "invalid model")

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


class InvalidGrid(MfglqError, ValueError):
    pass


class Divergence(MfglqError, ArithmeticError):
    """Non-finite or blown-up values during integration or simulation."""


class SingularSystem(MfglqError, ArithmeticError):
    pass


class IndexOutOfRange(MfglqError, ValueError):
    pass


class AsymmetricWeights(MfglqError, ValueError):
    pass


class LengthMismatch(MfglqError, ValueError):
    pass


class OutOfHorizon(MfglqError, ValueError):
    pass


class ConfigError(MfglqError, ValueError):
    pass
