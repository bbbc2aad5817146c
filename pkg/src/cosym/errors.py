"""Exception hierarchy shared by all cosym modules."""

from __future__ import annotations


class CosymError(Exception):
    """Base class for every error raised by this package."""


class ExprSyntaxError(CosymError, SyntaxError):
    """Malformed expression source.

    ``offset`` is the UTF-8 byte offset of the offending token and
    ``expected`` the set of token kinds that would have been accepted.
    """

    def __init__(self, message: str, src: str, offset: int, expected: frozenset[str] = frozenset()):
        self.src = src
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f"{message} at byte {offset}"
        if self.expected:
            detail += f" (expected one of: {', '.join(sorted(self.expected))})"
        super().__init__(detail)


class UnknownVariable(CosymError, NameError):
    def __init__(self, name: str, src: str = ""):
        # NameError.__init__ resets .name, so assign afterwards
        super().__init__(f"unknown variable {name!r}" + (f" in {src!r}" if src else ""))
        self.name = name
        self.src = src


class DomainError(CosymError, ArithmeticError):
    """An operation was evaluated outside its domain (log of x <= 0, x/0, ...)."""

    def __init__(self, message: str, subexpression: str):
        self.subexpression = subexpression
        super().__init__(f"{message}: {subexpression}")


class LayoutMismatch(CosymError, ValueError):
    pass


class DegenerateStructure(CosymError, ArithmeticError):
    """The flat operator is (numerically) singular at the requested state."""

    def __init__(self, message: str, condition: float = float("inf")):
        self.condition = condition
        super().__init__(message)


class TemperatureDegenerate(DegenerateStructure):
    """A temperature dH/dS_A vanishes, so the eta forms lose their entropy component."""


class SingularLegendre(CosymError, ArithmeticError):
    pass


class NewtonDivergence(CosymError, ArithmeticError):
    def __init__(self, message: str, last_iterate):
        self.last_iterate = last_iterate
        super().__init__(message)


class StepFailure(CosymError, RuntimeError):
    pass


class NonFiniteState(CosymError, FloatingPointError):
    pass


class ConfigError(CosymError, ValueError):
    """Invalid scenario file; ``diagnostics`` is a list of machine-readable dicts."""

    def __init__(self, diagnostics: list[dict]):
        self.diagnostics = diagnostics
        first = diagnostics[0]["message"] if diagnostics else "invalid configuration"
        super().__init__(first if len(diagnostics) == 1 else f"{first} (+{len(diagnostics) - 1} more)")
