"""Exception hierarchy for the toolkit.

Every failure mode that callers are expected to handle has its own class;
all inherit from SwitchSynthError so a CLI can catch the lot in one place.
"""

from __future__ import annotations


class SwitchSynthError(Exception):
    """Base class for all toolkit errors."""


# -- interval / box layer ----------------------------------------------------

class DivisionByZeroInterval(SwitchSynthError):
    """Divisor interval contains zero."""


class DomainError(SwitchSynthError):
    """Elementary function evaluated outside its domain (e.g. sqrt of a
    partially negative interval)."""


class DegenerateBox(SwitchSynthError):
    """Bisection requested on a box whose every dimension has zero width."""


class DimensionMismatch(SwitchSynthError):
    """Two boxes of different dimension were combined."""


# -- model / expression layer ------------------------------------------------

class ModelSyntaxError(SwitchSynthError):
    """Parse error in a model, problem or expression source text."""

    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col
        self.message = message


class UndeclaredVariable(SwitchSynthError):
    """Expression references a name that is neither a state variable,
    disturbance variable nor declared constant."""


class ArityMismatch(SwitchSynthError):
    """A mode's right-hand-side vector length differs from the declared
    state dimension."""


class UnsupportedOrder(SwitchSynthError):
    """Time-derivative order outside the supported range."""


# -- integrator layer --------------------------------------------------------

class EnclosureFailure(SwitchSynthError):
    """No a priori enclosure could be certified at the current step size."""


class StepTooWide(SwitchSynthError):
    """Local truncation error exceeded its tolerance; step must shrink."""


class IntegrationFailure(SwitchSynthError):
    """Validated integration failed even at the minimum step size."""


# -- synthesis layer ---------------------------------------------------------

class SynthesisFailure(SwitchSynthError):
    """Decomposition could not cover the requested box.

    Carries the witness sub-box that could not be controlled.
    """

    def __init__(self, cell, message: str = ""):
        super().__init__(message or f"uncoverable cell {cell}")
        self.cell = cell


class SynthesisTimeout(SwitchSynthError):
    """Pattern search exceeded its wall-clock budget."""

    def __init__(self, message: str, stats=None):
        super().__init__(message)
        self.stats = stats


class InvalidProblem(SwitchSynthError):
    """Synthesis problem violates its structural invariants."""


# -- controller layer --------------------------------------------------------

class OutsideDomain(SwitchSynthError):
    """A state fell outside every controller cell."""


class FormatError(SwitchSynthError):
    """Controller file is malformed or truncated."""


class VersionMismatch(SwitchSynthError):
    """Controller file was written by an incompatible major version."""
