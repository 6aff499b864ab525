"""Exception hierarchy shared by all modules."""


class DtallocError(Exception):
    """Base class for every error raised by this package."""


class InvalidRange(DtallocError, ValueError):
    pass


class DirectedUnbalanced(DtallocError, ValueError):
    pass


class DirectedGraphRejected(DtallocError, ValueError):
    pass


class IntervalEmpty(DtallocError, ValueError):
    pass


class ZeroCoefficient(DtallocError, ValueError):
    pass


class DimensionMismatch(DtallocError, ValueError):
    pass


class EmptyDomain(DtallocError, ValueError):
    pass


class NonPositiveInput(DtallocError, ValueError):
    pass


class InfeasiblePoint(DtallocError, ValueError):
    pass


class BracketFailure(DtallocError, RuntimeError):
    pass


class TooManyAgents(DtallocError, ValueError):
    pass


class EmptyFeasibleGrid(DtallocError, ValueError):
    pass


class HistoryUnderflow(DtallocError, RuntimeError):
    """A packet arrived later than the delay bound allows."""


class ConfigParseError(DtallocError, ValueError):
    pass


class ConfigValidationError(DtallocError, ValueError):
    """Raised with every validation problem found in a scenario file."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))
