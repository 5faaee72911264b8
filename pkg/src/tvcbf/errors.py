"""Exception hierarchy shared by all modules."""


class TvcbfError(Exception):
    """Base class for toolkit errors."""


class DomainError(TvcbfError, ValueError):
    """Argument lies outside the domain of a comparison function."""


class InvalidInputError(TvcbfError, ValueError):
    """An input object fails a structural or certification precondition."""


class RangeError(TvcbfError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class DegenerateExtensionError(TvcbfError):
    """No strictly increasing convex/concave continuation exists.

    Raised when the right derivative at zero is 0 (convex case) or
    infinite (concave case). Perturb the function, e.g. add ``eps * x``.
    """


class CompositionInfeasibleError(TvcbfError):
    """The domination condition ``alpha1(-x) <= -alpha2(x)`` fails.

    Attributes:
        witness: abscissa ``x*`` where the condition is violated.
        margin: ``-alpha2(x*) - alpha1(-x*)`` (negative).
    """

    def __init__(self, message, witness=None, margin=None):
        super().__init__(message)
        self.witness = witness
        self.margin = margin


class CompositionRefusedError(TvcbfError):
    """A step of the time-varying CBF construction pipeline failed.

    ``step`` names the failing stage: ``"(1)"`` for the choice of the
    shift comparison function / domination, ``"(2)"`` for the rate
    condition, ``"assumption-1"`` for trajectory continuity, or
    ``"certification"`` for the product-grid audit.
    """

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


class AssumptionViolationError(TvcbfError, ValueError):
    """A shift trajectory jumps downward."""


class SynthesisError(TvcbfError):
    """LQR/ARE synthesis failed (not stabilizable or no convergence)."""


class NotACbfError(TvcbfError):
    """No positive linear comparison function certifies the barrier."""


class FilterInfeasibleError(TvcbfError):
    """Hard-mode safety filter found no admissible input.

    Inside a certified domain this indicates a certification breach.
    """

    def __init__(self, t, x, message="no admissible input"):
        super().__init__(f"{message} at t={t:.6g}, x={list(map(float, x))}")
        self.t = t
        self.x = x


class DivergenceError(TvcbfError):
    """Integration produced a non-finite state; carries the partial trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class ConfigError(TvcbfError):
    """Config file fails to parse or validate; ``field`` names the offending key."""

    def __init__(self, message, field=None, line=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field '{field}'")
        prefix = f"{', '.join(loc)}: " if loc else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line


class NumericError(TvcbfError, ArithmeticError):
    """A barrier or vector field evaluated to a non-finite value."""
