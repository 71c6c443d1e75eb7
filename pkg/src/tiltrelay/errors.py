"""Exception types raised across the package."""


class TiltRelayError(Exception):
    """Base class for all package errors."""


class DegenerateThrust(TiltRelayError, ValueError):
    """Commanded acceleration cancels gravity, so thrust direction is undefined."""


class OutOfDomain(TiltRelayError, ValueError):
    pass


class SingularFit(TiltRelayError, ValueError):
    pass


class DiscontinuousChain(TiltRelayError, ValueError):
    pass


class CoincidentNodes(TiltRelayError, ValueError):
    pass


class HorizonMismatch(TiltRelayError, ValueError):
    pass


class KindMismatch(TiltRelayError, ValueError):
    pass


class DimensionMismatch(TiltRelayError, ValueError):
    pass


class InfeasibleInitialGuess(TiltRelayError, ValueError):
    pass


class MaxIterationsExceeded(TiltRelayError, RuntimeError):
    pass


class UnknownSelector(TiltRelayError, KeyError):
    pass


class SolverDiverged(TiltRelayError, RuntimeError):
    pass


class ParseError(TiltRelayError, ValueError):
    pass


class ValidationError(TiltRelayError, ValueError):
    """Config failed validation; ``problems`` lists every violated field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
