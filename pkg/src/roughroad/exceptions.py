"""Exception hierarchy.

Outcomes that are *results* of a computation (a certified blow-up, a case
without profiles) are distinguished from input validation failures so the
CLI can map them to different exit codes.
"""


class RoughRoadError(Exception):
    """Base class for all package errors."""


class ValidationError(RoughRoadError, ValueError):
    """Invalid input (bad parameter, out-of-domain density, ...)."""


class DomainError(ValidationError):
    pass


class NoRoot(RoughRoadError):
    pass


class RHViolation(ValidationError):
    """Rankine-Hugoniot condition fails for the given pair of densities."""

    def __init__(self, flux_minus, flux_plus):
        self.flux_minus = flux_minus
        self.flux_plus = flux_plus
        super().__init__(
            f"Rankine-Hugoniot violated: f-(rho-)={flux_minus:.12g} "
            f"!= f+(rho+)={flux_plus:.12g}"
        )


class DegenerateCase(RoughRoadError):
    pass


class OutOfRange(ValidationError):
    pass


class CertifiedOutcome(RoughRoadError):
    """A computation terminated with a mathematically meaningful negative
    result (blow-up, nonexistence). Not a crash."""


class BlowUp(CertifiedOutcome):
    def __init__(self, x, reason=""):
        self.x = x
        self.reason = reason
        super().__init__(f"solution blows up at x={x:.12g} ({reason})")


class NoProfile(CertifiedOutcome):
    pass


class SeedFailure(CertifiedOutcome):
    pass


class StepRejected(RoughRoadError):
    pass


class NotApplicable(RoughRoadError):
    pass


class SpanError(RoughRoadError):
    pass


class SpanTooShort(SpanError):
    pass


class RangeExhausted(SpanError):
    pass


class OutsideD(RoughRoadError):
    pass


class SpacingViolation(RoughRoadError):
    def __init__(self, index, gap, ell):
        self.index = index
        self.gap = gap
        super().__init__(
            f"spacing violation at car {index}: gap {gap:.6g} < car length {ell:.6g}"
        )


class AlignmentError(RoughRoadError):
    pass
