"""Exception taxonomy shared across the package.

The command-line harness maps these onto exit codes (input error -> 2,
numerical error -> 3, acceptance failure -> 4), so raising the right
class matters at module boundaries.
"""

from __future__ import annotations


class InputError(ValueError):
    """Caller handed us something malformed: bad shapes, invalid specs,
    out-of-range parameters, unreadable files."""


class NumericalError(ArithmeticError):
    """A computation failed or is undefined: non-convergence, zero
    matrices where a scale is required, undefined alignment."""


class DivergenceError(NumericalError):
    """An optimization run blew up.  Carries the step index and the
    partial log collected so far, so callers can keep the evidence."""

    def __init__(self, message: str, step: int, partial_log=None):
        super().__init__(message)
        self.step = step
        self.partial_log = partial_log


class AcceptanceError(RuntimeError):
    """A reproduction pipeline finished but violated its acceptance
    criterion."""
