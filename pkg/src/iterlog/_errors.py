import typing


class IterlogError(Exception):
    """Base class for every error raised by iterlog"""


class DomainError(IterlogError, ValueError):
    """An operation was called outside of its domain"""


class LatticeTooLargeError(DomainError):
    def __init__(self, size: int, limit: int) -> None:
        super().__init__(
            f"lattice enumeration exceeded {limit} elements (reached {size})"
        )
        self.size = size
        self.limit = limit


class NotALatticeError(DomainError):
    def __init__(self, message: str, pair: tuple[int, int]) -> None:
        super().__init__(message)
        self.pair = pair


class AxiomError(IterlogError, ValueError):
    """A lozenge algebra violates one of its defining axioms"""

    def __init__(self, axiom: str, violation: float, report: typing.Any = None):
        super().__init__(f"axiom {axiom!r} violated by {violation:.3e}")
        self.axiom = axiom
        self.violation = violation
        self.report = report


class IntegrationError(IterlogError, ArithmeticError):
    """A numerical integrator could not continue"""


class StiffnessError(IntegrationError):
    def __init__(self, message: str, t: float, step: float) -> None:
        super().__init__(f"{message} (t={t:.6g}, step={step:.3e})")
        self.t = t
        self.step = step


class BlowUpError(IntegrationError):
    def __init__(self, s: float, values: typing.Sequence[float]) -> None:
        super().__init__(
            f"v-coordinates left the decay regime at s={s:.6g} "
            f"(max v = {max(values):.3g})"
        )
        self.s = s
        self.values = tuple(values)


class ConsistencyError(IterlogError, RuntimeError):
    """Two independent computations that must agree did not"""


class ConfigError(IterlogError, ValueError):
    def __init__(self, message: str, path: str = "$") -> None:
        super().__init__(f"{path}: {message}")
        self.path = path
