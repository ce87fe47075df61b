"""Exception and warning types shared across the package."""


class DeathSpiralError(Exception):
    """Base class for all package errors."""


class DimensionError(DeathSpiralError, ValueError):
    """Vector lengths disagree with the market model."""


class DomainError(DeathSpiralError, ValueError):
    """Argument outside the domain of a function."""


class Infeasible(DeathSpiralError):
    """No break-even tariff exists in the requested class."""

    def __init__(self, message, shortfall=None):
        super().__init__(message)
        self.shortfall = shortfall


class NoSolution(DeathSpiralError):
    """Calibration residual system has no admissible root."""


class NoBracket(DeathSpiralError):
    """Bisection endpoints do not bracket a transition."""


class NoFeasibleRegion(DeathSpiralError):
    """The cost cannot be recovered even without any installed capacity."""


class EmptyFeasibleRegion(DeathSpiralError):
    """A potential curve has fewer than two feasible points."""


class NoStabilizingCharge(DeathSpiralError):
    """Even the zero-markup connection charge fails to stabilize adoption."""


class NegativeConnectionChargeWarning(UserWarning):
    pass


class AssumptionWarning(UserWarning):
    """A sampled check of a monotonicity assumption failed."""
