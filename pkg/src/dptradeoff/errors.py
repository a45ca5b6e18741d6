"""Exception hierarchy.

Every error raised by the solvers derives from :class:`TradeoffError` so the
CLI can map them to exit codes in one place.
"""


class TradeoffError(Exception):
    """Base class for all package errors."""


class ModelError(TradeoffError, ValueError):
    """The CMDP instance violates one of its standing assumptions."""


class NonConvexPower(ModelError):
    pass


class ProbabilityNotNormalized(ModelError):
    pass


class RateCapBelowArrivalMax(ModelError):
    pass


class BufferTooSmall(ModelError):
    pass


class ZeroArrivalRate(ModelError):
    pass


class StateOutOfRange(TradeoffError, IndexError):
    pass


class MalformedSpec(TradeoffError, ValueError):
    pass


class InfeasibleThresholds(TradeoffError, ValueError):
    pass


class InfeasiblePolicy(TradeoffError, ValueError):
    pass


class InfeasibleAction(TradeoffError, ValueError):
    pass


class NotUnichain(TradeoffError):
    pass


class SingularSystem(TradeoffError, ArithmeticError):
    pass


class NotAClosedClass(TradeoffError, ValueError):
    pass


class ReductionImpossible(TradeoffError):
    """No redirection can give the target class access from some state.

    Happens only for degenerate instances, e.g. point-mass arrivals with
    S == A, where state Q is absorbing under every feasible policy.
    """


class PoliciesDifferInMultipleRows(TradeoffError, ValueError):
    pass


class ZeroPowerDifference(TradeoffError, ArithmeticError):
    pass


class InfeasibleConstraint(TradeoffError, ValueError):
    pass


class NonStrictlyConvexPower(ModelError):
    pass


class IterationLimitExceeded(TradeoffError, RuntimeError):
    pass


class NumericalBreakdown(TradeoffError, ArithmeticError):
    pass
