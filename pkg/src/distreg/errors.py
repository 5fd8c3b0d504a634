"""Exception hierarchy shared by coordinator, workers and the CLI."""

from __future__ import annotations


class DistRegError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigurationError(DistRegError):
    exit_code = 4


class DataError(DistRegError):
    exit_code = 4


class DomainError(DistRegError, ValueError):
    """A numeric argument lies outside the domain of a function."""

    exit_code = 4


class InvalidDispersionError(DomainError):
    pass


class CollinearityError(DistRegError):
    """The weighted cross-product block is (numerically) singular."""

    exit_code = 4

    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class InsufficientDataError(DataError):
    pass


class DegenerateOutcomeError(DataError):
    pass


class NumericalFailure(DistRegError):
    exit_code = 4


class NonConvergenceError(DistRegError):
    exit_code = 2


class ProtocolError(DistRegError):
    exit_code = 3


class ExchangeTimeout(ProtocolError):
    pass


class PartnerFailure(ProtocolError):
    def __init__(self, dp_cd: int, detail: str = ""):
        msg = f"data partner {dp_cd} signalled job_fail.ok"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.dp_cd = dp_cd
        self.detail = detail
