from __future__ import annotations


class VexpError(Exception):
    """
    Base class for every error raised by vexp.
    """


class InvalidInputError(VexpError, ValueError):
    """
    Exception raised when an input violates a precondition of the requested operation.
    """


class NumericalFailure(VexpError):
    """
    Exception raised when a numerical procedure cannot produce a value.
    """


class GridError(InvalidInputError):
    """
    Exception raised for malformed grid domains or grid functions.
    """


class MollifierError(InvalidInputError):
    """
    Exception raised when a mollifier radius is not resolved by the grid.
    """


class ExponentError(InvalidInputError):
    """
    Exception raised for exponent fields with values below one or non-finite values.
    """


class PhiError(InvalidInputError):
    """
    Exception raised when a Φ-function cannot be evaluated or certified as requested.
    """


class IntegrandError(InvalidInputError):
    """
    Exception raised when an integrand fails its growth or zero conditions.
    """


class JumpSetError(InvalidInputError):
    """
    Exception raised for jump records that are not admissible on the domain.
    """


class JumpOutsideY(JumpSetError):
    """
    Exception raised when a jump lies where the exponent exceeds one, so the
    function is not in BV^{p(·)}.
    """

    def __init__(self, location: tuple[float, ...] | float):
        self.location: tuple[float, ...] | float = location
        super().__init__(f"Jump at {location} lies outside the set {{p = 1}}")


class GridFileError(InvalidInputError):
    """
    Exception raised for a malformed line in a grid-function or jump-set file.
    """

    def __init__(self, line: int, message: str):
        self.line: int = line
        super().__init__(f"line {line}: {message}")


class SequenceNotConvergent(InvalidInputError):
    """
    Exception raised when a sequence handed to a lower-semicontinuity probe does not
    converge to its claimed limit.
    """


class MissingFixtureError(InvalidInputError):
    """
    Exception raised when a named fixture is not found in a corpus store.
    """


class LuxemburgError(NumericalFailure):
    """
    Exception raised when the modular stays infinite for every scaling λ.
    """


class UnsupportedOperation(NumericalFailure):
    """
    Exception raised for quantities that are infinite or undefined for the requested
    composite, such as the strong recession of f^{p(x)} at points of Y.
    """
