"""Exception types raised across the package."""


class QnetError(Exception):
    """Base class for all package errors."""


class InvalidNetwork(QnetError):
    """A network spec failed validation."""

    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(report.messages()) or "invalid network")


class SingularSystem(QnetError):
    """Gaussian elimination met a pivot below tolerance (network effectively closed)."""


class DimensionMismatch(QnetError):
    pass


class NotSingleRate(QnetError):
    """Operation requires every service rate to be equal."""


class Infeasible(QnetError):
    """No single-rate reduction satisfies every required inequality."""


class BadSlack(QnetError):
    pass


class CouplingBroken(QnetError):
    """A pathwise dominance assertion failed; indicates a construction bug."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class StateSpaceTooLarge(QnetError):
    pass
