"""Velocity laws, flux functions, the two-valued speed limit and the case
classifier for stationary jumps at the speed-limit discontinuity.

Flux convention: ``f(V, rho) = V * rho * phi(rho)`` with ``phi`` decreasing,
``phi(0) = 1`` and ``phi(1) = 0``.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .exceptions import DomainError, NoRoot, RHViolation, ValidationError

__all__ = [
    "FluxModel",
    "RoadCondition",
    "Verdict",
    "Interval",
    "CaseReport",
    "RHCheck",
    "flux",
    "flux_derivative",
    "critical_density",
    "fbar_roots",
    "check_rankine_hugoniot",
    "classify_case",
    "speed_limit",
]

_VALIDATION_GRID = 2001
_FD_STEP = 1e-6


def _fd_derivative(fun, rho):
    rho = np.asarray(rho, dtype=float)
    lo = np.clip(rho - _FD_STEP, 0.0, 1.0)
    hi = np.clip(rho + _FD_STEP, 0.0, 1.0)
    return (fun(hi) - fun(lo)) / (hi - lo)


@dataclass(frozen=True)
class FluxModel:
    """Velocity law ``phi`` and the flux family it generates.

    Parameters
    ----------
    phi : callable
        Vectorized velocity law on [0, 1].
    phi_prime : callable, optional
        Derivative of ``phi``. Central differences are used when omitted.
    c_hat0 : float, optional
        Lower bound on ``-phi'``. Estimated on a grid when omitted.
    name : str
    """

    phi: Callable
    phi_prime: Optional[Callable] = None
    c_hat0: Optional[float] = None
    name: str = "custom"
    c0_estimate: float = field(init=False, default=float("nan"))

    def __post_init__(self):
        if abs(float(self.phi(0.0)) - 1.0) > 1e-12 or abs(float(self.phi(1.0))) > 1e-12:
            raise ValidationError(f"{self.name}: phi must satisfy phi(0)=1, phi(1)=0")
        grid = np.linspace(0.0, 1.0, _VALIDATION_GRID)
        dphi = self.dphi(grid)
        c_hat = float(-dphi.max())
        if self.c_hat0 is None:
            object.__setattr__(self, "c_hat0", c_hat)
        elif c_hat < self.c_hat0 - 1e-12:
            raise ValidationError(
                f"{self.name}: -phi' drops to {c_hat:.3g} < declared c_hat0={self.c_hat0:.3g}"
            )
        if c_hat < 1e-6:
            warnings.warn(f"{self.name}: -phi' margin {c_hat:.3g} is below 1e-6", RuntimeWarning)
        # concavity of rho*phi(rho); V only rescales
        g = grid * self.phi(grid)
        step = grid[1] - grid[0]
        second = (g[2:] - 2 * g[1:-1] + g[:-2]) / step**2
        c0 = float(-second.max())
        object.__setattr__(self, "c0_estimate", c0)
        if c0 < 1e-6:
            warnings.warn(f"{self.name}: flux concavity margin {c0:.3g} is below 1e-6", RuntimeWarning)

    def dphi(self, rho):
        if self.phi_prime is not None:
            return np.asarray(self.phi_prime(np.asarray(rho, dtype=float)), dtype=float)
        return _fd_derivative(self.phi, rho)

    @classmethod
    def lighthill_whitham(cls) -> "FluxModel":
        return cls(
            phi=lambda r: 1.0 - np.asarray(r, dtype=float),
            phi_prime=lambda r: -np.ones_like(np.asarray(r, dtype=float)),
            c_hat0=1.0,
            name="lw",
        )

    @classmethod
    def quadratic(cls) -> "FluxModel":
        """``phi = 1 - rho**2``; ``-phi'`` vanishes at 0, so construction warns."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return cls(
                phi=lambda r: 1.0 - np.asarray(r, dtype=float) ** 2,
                phi_prime=lambda r: -2.0 * np.asarray(r, dtype=float),
                name="quadratic",
            )

    @classmethod
    def by_name(cls, name: str) -> "FluxModel":
        builders = {"lw": cls.lighthill_whitham, "quadratic": cls.quadratic}
        try:
            return builders[name]()
        except KeyError:
            raise ValidationError(f"unknown velocity law {name!r}; choose from {sorted(builders)}")


@dataclass(frozen=True)
class RoadCondition:
    """Speed limit ``v_minus`` on x < 0 and ``v_plus`` on x >= 0."""

    v_minus: float
    v_plus: float

    def __post_init__(self):
        if not (self.v_minus > 0 and self.v_plus > 0):
            raise ValidationError("speed limits must be positive")
        if self.v_minus == self.v_plus:
            raise ValidationError("speed limits must differ across the jump")

    def k(self, x):
        return speed_limit(self, x)

    @property
    def downward(self) -> bool:
        return self.v_minus > self.v_plus


class Verdict(str, enum.Enum):
    INFINITELY_MANY = "InfinitelyMany"
    UNIQUE = "Unique"
    NONE = "None"


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool
    hi_closed: bool

    def __contains__(self, q):
        above = q >= self.lo if self.lo_closed else q > self.lo
        below = q <= self.hi if self.hi_closed else q < self.hi
        return bool(above and below)

    def __str__(self):
        return (
            ("[" if self.lo_closed else "(")
            + f"{self.lo:.6g}, {self.hi:.6g}"
            + ("]" if self.hi_closed else ")")
        )


@dataclass(frozen=True)
class CaseReport:
    label: str
    verdict: Verdict
    fbar: float
    rho_star: float
    rho_minus: float
    rho_plus: float
    rho1_minus: float
    rho2_minus: float
    rho1_plus: float
    rho2_plus: float
    q0_range: Optional[Interval]
    degenerate: bool = False

    @property
    def roots(self):
        """The four densities in increasing order."""
        if self.label.startswith("1"):
            return (self.rho1_minus, self.rho1_plus, self.rho2_plus, self.rho2_minus)
        return (self.rho1_plus, self.rho1_minus, self.rho2_minus, self.rho2_plus)

    def as_lines(self):
        rows = [
            ("label", self.label),
            ("verdict", self.verdict.value),
            ("fbar", f"{self.fbar:.17g}"),
            ("rho_star", f"{self.rho_star:.17g}"),
            ("rho_minus", f"{self.rho_minus:.17g}"),
            ("rho_plus", f"{self.rho_plus:.17g}"),
            ("rho1_minus", f"{self.rho1_minus:.17g}"),
            ("rho2_minus", f"{self.rho2_minus:.17g}"),
            ("rho1_plus", f"{self.rho1_plus:.17g}"),
            ("rho2_plus", f"{self.rho2_plus:.17g}"),
            ("q0_range", str(self.q0_range) if self.q0_range else "none"),
            ("degenerate", str(self.degenerate).lower()),
        ]
        return [f"{k}={v}" for k, v in rows]


def _check_density(rho):
    arr = np.asarray(rho, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(np.isnan(arr)):
        raise DomainError(f"density outside [0, 1]: {rho!r}")
    return arr


def flux(model: FluxModel, V: float, rho):
    """``V * rho * phi(rho)``; scalar in, scalar out."""
    arr = _check_density(rho)
    out = V * arr * model.phi(arr)
    return float(out) if np.ndim(out) == 0 else out


def flux_derivative(model: FluxModel, V: float, rho):
    arr = np.asarray(rho, dtype=float)
    out = V * (model.phi(arr) + arr * model.dphi(arr))
    return float(out) if np.ndim(out) == 0 else out


def _bisect(fun, lo, hi, tol, maxiter=200):
    f_lo = fun(lo)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol or mid in (lo, hi):
            break
        f_mid = fun(mid)
        if f_mid == 0.0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def critical_density(model: FluxModel, V: float = 1.0, tol: float = 1e-15) -> float:
    """Density maximising the flux. Independent of ``V``."""
    d = lambda r: float(model.phi(r) + r * model.dphi(r))
    if not (d(0.0) > 0 and d(1.0) < 0):
        raise NoRoot("flux derivative does not change sign on [0, 1]; flux not unimodal")
    return _bisect(d, 0.0, 1.0, tol)


def fbar_roots(model: FluxModel, V: float, fbar: float, tol: float = 1e-15):
    """Sub- and supercritical densities with ``flux(V, rho) == fbar``."""
    rho_star = critical_density(model)
    fmax = flux(model, V, rho_star)
    if fbar <= 0:
        raise NoRoot(f"flux level must be positive, got {fbar!r}")
    slack = 1e-14 * max(1.0, fmax)
    if fbar > fmax + slack:
        raise NoRoot(f"flux level {fbar:.12g} exceeds max flux {fmax:.12g} for V={V}")
    if fbar >= fmax - slack:
        # tangent level: both roots merge at the maximum
        return rho_star, rho_star
    g = lambda r: V * r * float(model.phi(r)) - fbar
    lo = _bisect(g, 0.0, rho_star, tol)
    hi = _bisect(g, rho_star, 1.0, tol)
    return lo, hi


class RHCheck(NamedTuple):
    fbar: float
    trivial: bool


def check_rankine_hugoniot(model, road, rho_minus, rho_plus, rtol=1e-10) -> RHCheck:
    f_minus = flux(model, road.v_minus, rho_minus)
    f_plus = flux(model, road.v_plus, rho_plus)
    fbar = 0.5 * (f_minus + f_plus)
    if abs(f_minus - f_plus) > rtol * max(1.0, fbar):
        raise RHViolation(f_minus, f_plus)
    return RHCheck(fbar, fbar <= rtol)


def classify_case(model, road, rho_minus, rho_plus, rtol=1e-10) -> CaseReport:
    """Assign one of the eight sub-cases and the existence verdict."""
    check = check_rankine_hugoniot(model, road, rho_minus, rho_plus, rtol=rtol)
    if check.trivial:
        raise ValidationError("flux level is zero (empty or jammed road): trivial case")
    fbar = check.fbar
    rho_star = critical_density(model)
    r1m, r2m = fbar_roots(model, road.v_minus, min(fbar, flux(model, road.v_minus, rho_star)))
    r1p, r2p = fbar_roots(model, road.v_plus, min(fbar, flux(model, road.v_plus, rho_star)))
    degenerate = False
    eps = 1e-9

    if road.downward:
        degenerate = abs(r2p - r1p) <= eps
        low_minus = rho_minus < rho_star
        if degenerate:
            label = "1A" if low_minus else "1D"
        else:
            high_plus = rho_plus > rho_star
            label = {(True, True): "1A", (True, False): "1B",
                     (False, True): "1C", (False, False): "1D"}[(low_minus, high_plus)]
    else:
        degenerate = abs(r2m - r1m) <= eps
        high_plus = rho_plus > rho_star
        if degenerate:
            label = "2A" if high_plus else "2D"
        else:
            low_minus = rho_minus < rho_star
            label = {(True, True): "2A", (True, False): "2B",
                     (False, True): "2C", (False, False): "2D"}[(low_minus, high_plus)]

    q0 = None
    if label == "1A":
        if degenerate:
            verdict = Verdict.UNIQUE
            q0 = Interval(rho_star, rho_star, True, True)
        else:
            verdict = Verdict.INFINITELY_MANY
            q0 = Interval(r1p, rho_plus, False, True)
    elif label == "2A":
        verdict = Verdict.INFINITELY_MANY
        q0 = Interval(r1p, r2m, True, True)
    elif label in ("1B", "2B"):
        verdict = Verdict.UNIQUE
        q0 = Interval(rho_plus, rho_plus, True, True)
    else:
        verdict = Verdict.NONE

    return CaseReport(
        label=label, verdict=verdict, fbar=fbar, rho_star=rho_star,
        rho_minus=float(rho_minus), rho_plus=float(rho_plus),
        rho1_minus=r1m, rho2_minus=r2m, rho1_plus=r1p, rho2_plus=r2p,
        q0_range=q0, degenerate=degenerate,
    )


def speed_limit(road: RoadCondition, x):
    """Right-continuous step: ``v_plus`` at x = 0."""
    out = np.where(np.asarray(x) < 0, road.v_minus, road.v_plus)
    return float(out) if np.ndim(out) == 0 else out


def densities_for_side(model, road, fbar, side: str):
    """Pick (rho_minus, rho_plus) among the roots, ``side`` like ``"low-high"``."""
    try:
        left, right = side.split("-")
    except ValueError:
        raise ValidationError(f"side must look like 'low-high', got {side!r}")
    pick = {"low": 0, "high": 1}
    if left not in pick or right not in pick:
        raise ValidationError(f"side must combine 'low'/'high', got {side!r}")
    rm = fbar_roots(model, road.v_minus, fbar)
    rp = fbar_roots(model, road.v_plus, fbar)
    return rm[pick[left]], rp[pick[right]]

