"""Exception types raised across the package."""


class GelfandError(Exception):
    """Base class for all package errors."""


class SpacingTooCoarse(GelfandError):
    pass


class NonFiniteIntegrand(GelfandError):
    pass


class ConditionViolated(GelfandError):
    """A structural condition on the nonlinearity failed at a witness point."""

    def __init__(self, condition, witness):
        self.condition = condition
        self.witness = witness
        super().__init__(f"condition {condition!r} violated at tau={witness!r}")


class NoConvergence(GelfandError):
    """Newton iteration failed; near the fold this is expected."""

    def __init__(self, message, residual=float("nan"), iterations=0, last=None):
        self.residual = residual
        self.iterations = iterations
        self.last = last
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")


class IterationStalled(GelfandError):
    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class LadderTooShort(GelfandError):
    pass


class DeltaOutOfRange(GelfandError):
    pass


class ExponentOutOfRange(GelfandError):
    pass


class HypothesisViolated(GelfandError):
    pass


class ConfigError(GelfandError):
    """Invalid configuration; the message names the offending key."""
