"""Exception types shared across the package."""

from __future__ import annotations


class ConvresError(Exception):
    """Base class for all package errors."""


class CaseSyntaxError(ConvresError):
    """A case file could not be tokenized into well-formed matrix blocks."""


class ValidationError(ConvresError):
    """A parsed case violates a structural invariant.

    The ``invariant`` attribute names the failing check so callers (and the
    CLI) can report it without parsing the message.
    """

    def __init__(self, invariant: str, message: str):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


class SingularBranch(ConvresError):
    """A branch with zero series impedance reached admittance assembly."""


class SingularJacobian(ConvresError):
    """The power flow Jacobian at the base point is (numerically) singular."""


class InfeasibleBase(ConvresError):
    """The base operating point violates an operational limit."""


class DomainError(ConvresError):
    """An envelope was evaluated outside its validity window."""


class SoundnessViolation(ConvresError):
    """A certified point failed the ground-truth check.

    Carries a ``dump`` dict with everything needed to reproduce the cell.
    """

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump
