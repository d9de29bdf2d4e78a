"""Exception hierarchy shared across the library."""


class QuantoError(Exception):
    """Base class for all qcolloc errors."""


class MarketDataError(QuantoError):
    """Malformed or inconsistent market-data input."""


class DomainError(QuantoError):
    """Evaluation requested outside a surface or marginal domain."""


class ArbitrageError(DomainError):
    """The vol surface violates no-arbitrage where it was evaluated."""


class TailCoverageError(DomainError):
    """Declared strike bounds do not cover enough probability mass."""


class CalibrationError(QuantoError):
    """A calibration target cannot be reached inside the search bracket."""


class BoundViolationError(QuantoError):
    """A price lies outside its no-arbitrage bounds."""
