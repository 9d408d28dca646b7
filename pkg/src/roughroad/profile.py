"""Stationary density profiles traced by Follow-the-Leader traffic.

A profile ``Q`` satisfies the delay equation

    Q'(x) = Q^2 / (l k(x) phi(Q)) * [k(x) phi(Q(x)) - k(x#) phi(Q(x#))],
    x# = x + l / Q(x),

whose delayed argument points *forward*, so it is integrated backward in x
from data prescribed on x >= 0 (method of steps). On a uniform road the same
equation defines the travelling wave ``W``.
"""
from __future__ import annotations

import bisect
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from . import model as _m
from .exceptions import (
    BlowUp,
    DegenerateCase,
    DomainError,
    NotApplicable,
    OutOfRange,
    OutsideD,
    RangeExhausted,
    SeedFailure,
    SpanError,
    SpanTooShort,
    StepRejected,
    ValidationError,
)

__all__ = [
    "Profile",
    "ProfileFamily",
    "MarchOptions",
    "TransversalityReport",
    "leader_position",
    "solve_w_profile",
    "build_initial_data",
    "solve_q_backward",
    "transversality_report",
    "periodic_residual",
    "generate_positions",
    "asymptote",
    "build_family",
    "psi",
    "scan_case",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


# ---------------------------------------------------------------------------
# Profile container
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Profile:
    """Sampled density profile with a piecewise cubic Hermite evaluator.

    ``slope_left[j]`` / ``slope_right[j]`` are the one-sided derivatives at
    node j; they differ only at kinks. When slopes are not supplied (e.g. a
    profile read back from CSV) monotone PCHIP slopes are used. Evaluation
    outside the grid extends the end values as constants.
    """

    grid: np.ndarray
    values: np.ndarray
    ell: float
    fbar: float = float("nan")
    slope_left: Optional[np.ndarray] = None
    slope_right: Optional[np.ndarray] = None
    case_label: Optional[str] = None
    speed: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        values = np.array(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValidationError("grid and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(grid) <= 0):
            raise ValidationError("profile grid must be strictly increasing")
        if np.any(values <= 0) or np.any(values >= 1) or np.any(~np.isfinite(values)):
            raise DomainError("profile values must lie strictly inside (0, 1)")
        if self.slope_left is None or self.slope_right is None:
            slopes = PchipInterpolator(grid, values).derivative()(grid)
            sl = sr = slopes
        else:
            sl = np.array(self.slope_left, dtype=float)
            sr = np.array(self.slope_right, dtype=float)
        for name, arr in (("grid", grid), ("values", values), ("slope_left", sl), ("slope_right", sr)):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_glist", grid.tolist())
        object.__setattr__(self, "_vlist", values.tolist())
        object.__setattr__(self, "_sllist", np.asarray(sl).tolist())
        object.__setattr__(self, "_srlist", np.asarray(sr).tolist())

    # -- evaluation ---------------------------------------------------------
    @property
    def x_min(self) -> float:
        return float(self.grid[0])

    @property
    def x_max(self) -> float:
        return float(self.grid[-1])

    @property
    def h(self) -> float:
        return float(np.median(np.diff(self.grid)))

    @property
    def q_at_zero(self) -> float:
        return float(self(0.0))

    @property
    def asymptote_left(self) -> float:
        return self.meta.get("asymptote_left", float(self.values[0]))

    @property
    def asymptote_right(self) -> float:
        return self.meta.get("asymptote_right", float(self.values[-1]))

    def _locate(self, x):
        idx = np.searchsorted(self.grid, x, side="right") - 1
        idx = np.clip(idx, 0, self.grid.size - 2)
        x0 = self.grid[idx]
        dx = self.grid[idx + 1] - x0
        return idx, x0, dx, (x - x0) / dx

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx, _, dx, t = self._locate(x)
        t2 = t * t
        q = (
            (1 + 2 * t) * (1 - t) ** 2 * self.values[idx]
            + t * (1 - t) ** 2 * dx * self.slope_right[idx]
            + t2 * (3 - 2 * t) * self.values[idx + 1]
            + t2 * (t - 1) * dx * self.slope_left[idx + 1]
        )
        q = np.where(x <= self.grid[0], self.values[0], q)
        q = np.where(x >= self.grid[-1], self.values[-1], q)
        return float(q) if q.ndim == 0 else q

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        idx, _, dx, t = self._locate(x)
        d = (
            (6 * t * t - 6 * t) * (self.values[idx] - self.values[idx + 1]) / dx
            + (3 * t * t - 4 * t + 1) * self.slope_right[idx]
            + (3 * t * t - 2 * t) * self.slope_left[idx + 1]
        )
        d = np.where((x < self.grid[0]) | (x > self.grid[-1]), 0.0, d)
        return float(d) if d.ndim == 0 else d

    def scalar(self, x: float) -> float:
        """Fast scalar evaluation for inner loops."""
        g = self._glist
        if x <= g[0]:
            return self._vlist[0]
        if x >= g[-1]:
            return self._vlist[-1]
        j = bisect.bisect_right(g, x) - 1
        return _hermite(x, g[j], g[j + 1], self._vlist[j], self._vlist[j + 1],
                        self._srlist[j], self._sllist[j + 1])

    def scalar_derivative(self, x: float) -> float:
        g = self._glist
        if x < g[0] or x > g[-1]:
            return 0.0
        j = min(bisect.bisect_right(g, x) - 1, len(g) - 2)
        return _hermite_d(x, g[j], g[j + 1], self._vlist[j], self._vlist[j + 1],
                          self._srlist[j], self._sllist[j + 1])

    def shifted(self, s: float) -> "Profile":
        """Profile of ``x -> Q(x + s)``."""
        meta = dict(self.meta)
        meta["shift"] = meta.get("shift", 0.0) + s
        return Profile(self.grid - s, self.values, self.ell, self.fbar,
                       self.slope_left, self.slope_right, self.case_label, self.speed, meta)

    # -- serialization ------------------------------------------------------
    def to_csv(self, path) -> None:
        write_xy_csv(path, "x,Q", self.grid, self.values)

    @classmethod
    def from_csv(cls, path, ell: float, fbar: float = float("nan")) -> "Profile":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], ell, fbar)


def write_xy_csv(path, header, xs, ys):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for x, y in zip(xs, ys):
            fh.write(f"{x:.17g},{y:.17g}\n")


def _hermite(x, xa, xb, qa, qb, da, db):
    dx = xb - xa
    t = (x - xa) / dx
    u = 1.0 - t
    return (1 + 2 * t) * u * u * qa + t * u * u * dx * da + t * t * (3 - 2 * t) * qb + t * t * (t - 1) * dx * db


def _hermite_d(x, xa, xb, qa, qb, da, db):
    dx = xb - xa
    t = (x - xa) / dx
    return (6 * t * t - 6 * t) * (qa - qb) / dx + (3 * t * t - 4 * t + 1) * da + (3 * t * t - 2 * t) * db


# ---------------------------------------------------------------------------
# Backward method of steps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarchOptions:
    """Numerical controls for the backward march.

    ``h`` defaults to ``ell / 64``. ``eps_q`` and ``slope_cap`` are the
    blow-up thresholds; ``crossing_tol`` is the bisection tolerance used to
    localise where the leader of the current car passes x = 0.
    """

    h: Optional[float] = None
    slope_cap: float = 1e6
    eps_q: float = 1e-9
    crossing_tol: float = 1e-12
    residual_tol: float = 1e-6

    def step(self, ell):
        h = self.h if self.h is not None else ell / 64.0
        if not (0 < h < ell):
            raise ValidationError(f"step h={h} must satisfy 0 < h < ell={ell}")
        return h


class _ExpTail:
    """Linearised approach ``rho2 - delta * exp(-mu x)`` on x >= 0."""

    def __init__(self, rho2, delta, mu):
        self.rho2, self.delta, self.mu = rho2, delta, mu

    def scalar(self, x):
        return self.rho2 - self.delta * math.exp(-self.mu * x)

    def scalar_derivative(self, x):
        return self.mu * self.delta * math.exp(-self.mu * x)


class _BackwardMarch:
    """Classical RK4 marching x downward from ``x0``.

    Delayed values come from ``right`` (prescribed data, x >= x0) or from a
    cubic Hermite interpolant of the nodes already computed, using the exact
    one-sided slopes stored at each node.
    """

    def __init__(self, right, x0, ell, model, h, opts, road=None):
        self.right = right
        self.x0 = x0
        self.ell = ell
        self.phi = model.phi
        self.h = h
        self.opts = opts
        self.road = road
        q0 = right.scalar(x0)
        # mixed: car behind the jump, leader beyond it
        self.mixed = road is not None and x0 <= 0 and x0 + ell / q0 > 0
        self.xs = [x0]
        self.neg = [-x0]
        self.qs = [q0]
        self.dr = [right.scalar_derivative(x0)]
        self.dl = [self._rhs(x0, q0, self.mixed)]
        self.n_uniform = 0
        self.crossings: List[float] = []

    def _delayed(self, xq):
        if xq >= self.x0:
            return self.right.scalar(xq)
        i = bisect.bisect_left(self.neg, -xq)
        if i >= len(self.neg):
            raise StepRejected(f"delayed value at {xq:.12g} lies in the uncomputed region")
        return _hermite(xq, self.xs[i], self.xs[i - 1], self.qs[i], self.qs[i - 1],
                        self.dr[i], self.dl[i - 1])

    def _rhs(self, x, q, mixed):
        eps = self.opts.eps_q
        if not (eps < q < 1.0 - eps):
            raise BlowUp(x, f"density {q:.6g} left ({eps:g}, 1-{eps:g})")
        ell = self.ell
        qs = self._delayed(x + ell / q)
        pq = float(self.phi(q))
        ps = float(self.phi(qs))
        if mixed:
            vm, vp = self.road.v_minus, self.road.v_plus
            val = q * q / (ell * vm * pq) * (vm * pq - vp * ps)
        else:
            val = q * q / (ell * pq) * (pq - ps)
        if not abs(val) <= self.opts.slope_cap:
            raise BlowUp(x, f"slope {val:.3g} exceeds cap")
        return val

    def _rk4(self, x, q, step, mixed, k1):
        k2 = self._rhs(x - 0.5 * step, q - 0.5 * step * k1, mixed)
        k3 = self._rhs(x - 0.5 * step, q - 0.5 * step * k2, mixed)
        k4 = self._rhs(x - step, q - step * k3, mixed)
        q_new = q - step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        eps = self.opts.eps_q
        if not (eps < q_new < 1.0 - eps):
            raise BlowUp(x - step, f"density {q_new:.6g} left ({eps:g}, 1-{eps:g})")
        return q_new

    def _side(self, x, q):
        return x + self.ell / q > 0

    def _append(self, x, q, dl, dr):
        self.xs.append(x)
        self.neg.append(-x)
        self.qs.append(q)
        self.dl.append(dl)
        self.dr.append(dr)

    def advance_to(self, x_target):
        track = self.road is not None
        while self.xs[-1] > x_target:
            x, q = self.xs[-1], self.qs[-1]
            x_next = self.x0 - (self.n_uniform + 1) * self.h
            step = x - x_next
            k1 = self.dl[-1]
            q_new = self._rk4(x, q, step, self.mixed, k1)
            if track and x_next < 0 and self._side(x_next, q_new) != self.mixed:
                self._split_at_crossing(x, q, step, k1)
                continue
            self.n_uniform += 1
            slope = self._rhs(x_next, q_new, self.mixed)
            self._append(x_next, q_new, slope, slope)

    def _split_at_crossing(self, x, q, step, k1):
        sign0 = self.mixed
        lo, hi = 0.0, step
        while hi - lo > self.opts.crossing_tol:
            mid = 0.5 * (lo + hi)
            qm = self._rk4(x, q, mid, self.mixed, k1)
            if self._side(x - mid, qm) == sign0:
                lo = mid
            else:
                hi = mid
        tau = 0.5 * (lo + hi)
        xc = x - tau
        qc = self._rk4(x, q, tau, self.mixed, k1)
        dr = self._rhs(xc, qc, self.mixed)
        self.mixed = not self.mixed
        dl = self._rhs(xc, qc, self.mixed)
        self._append(xc, qc, dl, dr)
        self.crossings.append(xc)

    def nodes(self):
        """Computed nodes in increasing x."""
        return (np.array(self.xs[::-1]), np.array(self.qs[::-1]),
                np.array(self.dl[::-1]), np.array(self.dr[::-1]))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def leader_position(x, q, ell):
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0) or np.any(q >= 1):
        raise DomainError(f"density must lie in (0, 1), got {q!r}")
    if ell <= 0:
        raise ValidationError("car length must be positive")
    out = np.asarray(x, dtype=float) + ell / q
    return float(out) if out.ndim == 0 else out


def _tail_rate(model, rho2, ell):
    """Decay rate ``mu`` of ``rho2 - W(x) ~ exp(-mu x)`` at +infinity."""
    a = rho2 * rho2 * abs(float(model.dphi(rho2))) / (ell * float(model.phi(rho2)))
    tau = ell / rho2
    if a * tau <= 1.0:
        raise SeedFailure(f"right state {rho2:.6g} is not a stable limit (a*tau={a * tau:.4g} <= 1)")
    g = lambda mu: a * (1.0 - math.exp(-mu * tau)) - mu
    return brentq(g, 1e-9 * a, a, xtol=1e-15, rtol=1e-15)


def solve_w_profile(model, V, fbar, ell, opts: Optional[MarchOptions] = None, *,
                    seed_delta=1e-7, n_left=60, n_right=60, max_spacings=2000):
    """Travelling wave on a uniform road with speed limit ``V``.

    The wave rises from the subcritical root ``rho1`` (x -> -inf) to the
    supercritical root ``rho2`` (x -> +inf) of ``f(V, rho) = fbar`` and is
    normalised so that ``W(0)`` is the critical density.

    The march is seeded on x >= 0 with the linearised tail
    ``rho2 - seed_delta * exp(-mu x)`` and run backward; ``rho2`` repels in
    that direction so the trajectory departs toward ``rho1``.
    """
    opts = opts or MarchOptions()
    h = opts.step(ell)
    rho_star = _m.critical_density(model)
    fmax = _m.flux(model, V, rho_star)
    if fbar >= fmax * (1 - 1e-12):
        raise DegenerateCase(f"flux level {fbar:.12g} is the maximum flux; the wave degenerates")
    rho1, rho2 = _m.fbar_roots(model, V, fbar)
    mu = _tail_rate(model, rho2, ell)
    tail = _ExpTail(rho2, seed_delta, mu)
    march = _BackwardMarch(tail, 0.0, ell, model, h, opts)

    chunk = ell
    x_hat = None
    limit = -max_spacings * ell / rho1
    try:
        while True:
            march.advance_to(march.xs[-1] - chunk)
            qs = march.qs
            if qs[-1] > rho2 or qs[-1] < rho1 - 1e-6:
                raise SeedFailure(f"backward march left [{rho1:.6g}, {rho2:.6g}] at x={march.xs[-1]:.6g}")
            if x_hat is None and qs[-1] <= rho_star:
                x_hat = _locate_level(march, rho_star)
            if x_hat is not None and march.xs[-1] <= x_hat - n_left * ell / rho1:
                break
            if march.xs[-1] < limit:
                raise SeedFailure("backward march did not descend toward the subcritical root")
    except BlowUp as exc:
        raise SeedFailure(f"backward march blew up: {exc}") from exc

    xs, qs, dl, dr = march.nodes()
    x_end = x_hat + n_right * ell / rho2 + 2 * ell / rho1
    n_tail = max(1, int(math.ceil(x_end / h)))
    xt = h * np.arange(1, n_tail + 1)
    qt = np.array([tail.scalar(x) for x in xt])
    st = np.array([tail.scalar_derivative(x) for x in xt])
    grid = np.concatenate([xs, xt]) - x_hat
    values = np.concatenate([qs, qt])
    meta = {
        "rho_low": rho1, "rho_high": rho2, "mu": mu, "seed_delta": seed_delta,
        "asymptote_left": rho1, "asymptote_right": rho2, "kind": "W",
    }
    return Profile(grid, values, ell, fbar, np.concatenate([dl, st]), np.concatenate([dr, st]),
                   speed=V, meta=meta)


def _locate_level(march, level):
    """x where the computed solution crosses ``level`` (last crossing found)."""
    xs, qs = march.xs, march.qs
    j = len(qs) - 1
    while j > 0 and not (qs[j] <= level <= qs[j - 1]):
        j -= 1
    xa, xb = xs[j], xs[j - 1]
    f = lambda x: _hermite(x, xa, xb, qs[j], qs[j - 1], march.dr[j], march.dl[j - 1]) - level
    if f(xa) == 0.0:
        return xa
    return brentq(f, xa, xb, xtol=1e-15, rtol=1e-15)


def build_initial_data(kind, w: Optional[Profile] = None, q0: Optional[float] = None,
                       rho_plus: Optional[float] = None, *, ell: Optional[float] = None,
                       h: Optional[float] = None, x_max: Optional[float] = None) -> Profile:
    """Data on x >= 0: a horizontal shift of ``w`` or the constant ``rho_plus``."""
    kind = kind.lower().replace("_", "")
    if kind == "constant":
        if rho_plus is None:
            raise ValidationError("constant initial data needs rho_plus")
        if q0 is not None and abs(q0 - rho_plus) > 1e-12:
            raise OutOfRange("constant initial data requires q0 == rho_plus")
        ell = ell if ell is not None else (w.ell if w is not None else None)
        if ell is None:
            raise ValidationError("constant initial data needs ell")
        h = h if h is not None else ell / 64.0
        x_max = x_max if x_max is not None else 4 * ell / rho_plus
        n = int(math.ceil(x_max / h))
        grid = h * np.arange(n + 1)
        vals = np.full(grid.size, float(rho_plus))
        zeros = np.zeros(grid.size)
        return Profile(grid, vals, ell, slope_left=zeros, slope_right=zeros,
                       meta={"kind": "constant", "q0": float(rho_plus),
                             "asymptote_right": float(rho_plus)})
    if kind != "shiftedw":
        raise ValidationError(f"unknown initial data kind {kind!r}")
    if w is None or q0 is None:
        raise ValidationError("shifted-W initial data needs w and q0")
    lo, hi = w.meta.get("rho_low", w.values[0]), w.meta.get("rho_high", w.values[-1])
    if not (lo < q0 < hi):
        raise OutOfRange(f"q0={q0:.12g} outside the open range ({lo:.12g}, {hi:.12g}) of W")
    j = int(np.searchsorted(w.values, q0))
    if not (w.values[0] < q0 < w.values[-1]) or j == 0 or j >= w.values.size:
        raise OutOfRange(f"q0={q0:.12g} not attained on the sampled W")
    s = brentq(lambda x: w.scalar(x) - q0, w.grid[j - 1], w.grid[j], xtol=1e-15, rtol=1e-15)
    h = h if h is not None else w.h
    ell = w.ell
    if x_max is None:
        x_max = max(w.x_max - s, 4 * ell / w.values.min())
    n = int(math.ceil(x_max / h))
    grid = h * np.arange(n + 1)
    vals = np.array([w.scalar(x + s) for x in grid])
    vals[0] = q0
    slopes = np.array([w.scalar_derivative(x + s) for x in grid])
    meta = {"kind": "shiftedW", "shift": s, "q0": q0, "asymptote_right": hi, "w": w}
    return Profile(grid, vals, ell, w.fbar, slopes, slopes, speed=w.speed, meta=meta)


def solve_q_backward(init: Profile, model, road, ell, x_min, opts: Optional[MarchOptions] = None,
                     *, fbar: Optional[float] = None, case_label: Optional[str] = None) -> Profile:
    """Extend ``init`` (given on x >= 0) to ``[x_min, 0]`` across the jump.

    Raises :class:`BlowUp` when the density leaves (eps_q, 1 - eps_q) or the
    slope exceeds ``slope_cap``; the partially computed profile is attached
    to the exception as ``partial``.
    """
    opts = opts or MarchOptions()
    h = opts.step(ell)
    if x_min >= 0:
        raise ValidationError("x_min must be negative")
    if init.x_min > 1e-12 or init.x_min < -1e-12:
        raise ValidationError("initial data must start at x = 0")
    need = 2 * ell / float(init.values.min())
    if init.x_max < need - 1e-12:
        raise SpanError(f"initial data must extend to x >= {need:.6g}")
    march = _BackwardMarch(init, 0.0, ell, model, h, opts, road=road)
    try:
        march.advance_to(x_min)
    except BlowUp as exc:
        xs, qs, dl, dr = march.nodes()
        if xs.size >= 2:
            exc.partial = _join(xs, qs, dl, dr, init, ell, fbar, case_label, march)
        raise
    xs, qs, dl, dr = march.nodes()
    return _join(xs, qs, dl, dr, init, ell, fbar, case_label, march)


def _join(xs, qs, dl, dr, init, ell, fbar, case_label, march):
    keep = init.grid > 1e-12
    grid = np.concatenate([xs, init.grid[keep]])
    values = np.concatenate([qs, init.values[keep]])
    sl = np.concatenate([dl, init.slope_left[keep]])
    sr = np.concatenate([dr, init.slope_right[keep]])
    meta = {
        "kind": "Q",
        "c1_crossings": list(march.crossings),
        "init_kind": init.meta.get("kind"),
        "q0": float(init.values[0]),
        "asymptote_right": init.meta.get("asymptote_right", float(init.values[-1])),
    }
    if fbar is None:
        fbar = init.fbar
    return Profile(grid, values, ell, fbar if fbar is not None else float("nan"), sl, sr,
                   case_label=case_label, meta=meta)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransversalityReport:
    slope_c0_left: float
    slope_c0_right: float
    crossing: float
    slope_c1_left: float
    slope_c1_right: float
    h_prime: float
    fd_c1_left: float
    fd_c1_right: float
    c0_pass: bool
    c1_pass: bool

    @property
    def passed(self) -> bool:
        return self.c0_pass and self.c1_pass


def _find_c1_crossing(profile: Profile, ell):
    crossings = profile.meta.get("c1_crossings") or []
    if crossings:
        return crossings[0]
    neg = profile.grid[profile.grid < 0]
    if neg.size < 2:
        raise NotApplicable("profile does not extend to x < 0")
    s = neg + ell / profile(neg)
    idx = np.nonzero(np.sign(s[:-1]) != np.sign(s[1:]))[0]
    if idx.size == 0:
        raise NotApplicable("profile never crosses the curve Q = -ell/x")
    j = idx[-1]
    return brentq(lambda x: x + ell / profile.scalar(x), neg[j], neg[j + 1], xtol=1e-14)


def transversality_report(profile: Profile, model, road, ell, slope_cap=1e6) -> TransversalityReport:
    """One-sided slopes at the two switching curves x = 0 and Q = -ell/x."""
    if road is None or not isinstance(road, _m.RoadCondition):
        raise NotApplicable("uniform road: the equation has no switching curves")
    y = _find_c1_crossing(profile, ell)
    g = profile.grid
    j0 = int(np.argmin(np.abs(g)))
    if abs(g[j0]) > 1e-12:
        raise NotApplicable("profile grid has no node at x = 0")
    c0l, c0r = float(profile.slope_left[j0]), float(profile.slope_right[j0])
    jy = int(np.argmin(np.abs(g - y)))
    if abs(g[jy] - y) <= 1e-10:
        c1l, c1r = float(profile.slope_left[jy]), float(profile.slope_right[jy])
    else:
        c1l = c1r = profile.scalar_derivative(y)
    hp = ell / (y * y)
    d = profile.h
    fdl = (3 * profile.scalar(y) - 4 * profile.scalar(y - d) + profile.scalar(y - 2 * d)) / (2 * d)
    fdr = (-3 * profile.scalar(y) + 4 * profile.scalar(y + d) - profile.scalar(y + 2 * d)) / (2 * d)
    c0_pass = all(math.isfinite(v) and abs(v) < slope_cap for v in (c0l, c0r))
    c1_pass = c1l < hp and c1r < hp and fdl < hp and fdr < hp
    return TransversalityReport(c0l, c0r, y, c1l, c1r, hp, fdl, fdr, c0_pass, c1_pass)


def _speed_fn(road):
    if isinstance(road, _m.RoadCondition):
        return lambda z: np.where(z < 0, road.v_minus, road.v_plus)
    V = float(road)
    return lambda z: np.full_like(z, V)


def travel_time(profile: Profile, model, road, a, b):
    """Time to drive from ``a`` to ``b`` at speed ``k(z) phi(Q(z))``.

    Composite Gauss-Legendre on the profile's own nodes (plus x = 0), so every
    kink of the integrand is an interval endpoint.
    """
    g = profile.grid
    inner = g[(g > a) & (g < b)]
    pts = [a, *inner.tolist(), b]
    if a < 0 < b and 0.0 not in pts:
        pts.append(0.0)
    pts = np.unique(np.asarray(pts, dtype=float))
    lo, hi = pts[:-1], pts[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    z = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    k = _speed_fn(road)(z)
    vals = 1.0 / (k * model.phi(profile(z)))
    return float(np.sum(half[:, None] * _GL_WEIGHTS[None, :] * vals))


def periodic_residual(profile: Profile, model, road, ell, fbar, x) -> float:
    """``|time(x -> x#) - ell/fbar|``; zero for an exact profile."""
    q = profile.scalar(x)
    xs = x + ell / q
    if x < profile.x_min or xs > profile.x_max:
        raise SpanError(f"[{x:.6g}, {xs:.6g}] leaves the profile span [{profile.x_min:.6g}, {profile.x_max:.6g}]")
    return abs(travel_time(profile, model, road, x, xs) - ell / fbar)


def max_periodic_residual(profile, model, road, ell, fbar, n=50, lo=None, hi=None):
    """Largest residual over ``n`` points spread across the admissible span."""
    lo = profile.x_min if lo is None else lo
    hi = hi if hi is not None else profile.x_max - ell / float(profile.values.min()) - profile.h
    xs = np.linspace(lo, hi, n)
    return max(periodic_residual(profile, model, road, ell, fbar, float(x)) for x in xs)


def generate_positions(profile: Profile, z0, ell, n_back, n_fwd, *, span_check=True):
    """Car positions with ``z[i+1] - z[i] = ell / Q(z[i])`` through ``z0``."""
    if span_check and not (profile.x_min <= z0 <= profile.x_max):
        raise RangeExhausted(f"z0={z0} outside the profile span")
    fwd = [float(z0)]
    for _ in range(n_fwd):
        z = fwd[-1] + ell / profile.scalar(fwd[-1])
        if span_check and z > profile.x_max:
            raise RangeExhausted(f"forward recursion left the profile span at {z:.6g}")
        fwd.append(z)
    back = []
    qmin = float(profile.values.min())
    nxt = float(z0)
    for _ in range(n_back):
        g = lambda z, t=nxt: z + ell / profile.scalar(z) - t
        lo, hi = nxt - ell / qmin - ell, nxt - ell
        if g(lo) < 0 < g(hi):
            z = brentq(g, lo, hi, xtol=1e-15, rtol=1e-15)
        else:
            z = _damped_preimage(profile, nxt, ell)
        if span_check and z < profile.x_min:
            raise RangeExhausted(f"backward recursion left the profile span at {z:.6g}")
        back.append(z)
        nxt = z
    return np.array(back[::-1] + fwd)


def _damped_preimage(profile, target, ell, damping=0.5, tol=1e-12, maxiter=10000):
    z = target - ell / profile.scalar(target)
    for _ in range(maxiter):
        z_new = (1 - damping) * z + damping * (target - ell / profile.scalar(z))
        if abs(z_new - z) < 1e-15:
            z = z_new
            break
        z = z_new
    if abs(z + ell / profile.scalar(z) - target) > tol:
        raise RangeExhausted(f"no preimage found for leader position {target:.12g}")
    return z


def asymptote(profile: Profile, side: str = "left", min_span: float = 10.0):
    """Mean of Q over the outermost car spacing and its oscillation band.

    ``min_span`` is measured in car lengths ``ell``.
    """
    side = side.lower()
    ell = profile.ell
    if side == "left":
        if -profile.x_min < min_span * ell:
            raise SpanTooShort(f"left span {-profile.x_min:.4g} shorter than {min_span} car lengths")
        a = profile.x_min
        b = a + ell / profile.scalar(a)
    elif side == "right":
        if profile.x_max < min_span * ell:
            raise SpanTooShort(f"right span {profile.x_max:.4g} shorter than {min_span} car lengths")
        b = profile.x_max
        a = b - ell / profile.scalar(b)
    else:
        raise ValidationError("side must be 'left' or 'right'")
    xs = np.linspace(a, b, 257)
    vals = profile(xs)
    mean = float(trapezoid(vals, xs) / (b - a))
    return mean, float(vals.max() - vals.min())


# ---------------------------------------------------------------------------
# Families and the label function Psi
# ---------------------------------------------------------------------------


@dataclass
class ProfileFamily:
    members: List[Profile]
    q0s: np.ndarray
    q0_range: Optional[_m.Interval]
    road: object
    model: object
    ell: float
    fbar: float
    failures: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    min_gap: float = float("nan")
    max_overlap: float = float("nan")
    resolution: float = 1e-6

    @property
    def non_crossing(self) -> bool:
        """Adjacent members separate somewhere and never swap order by more
        than the resolution."""
        if len(self.members) < 2:
            return True
        return self.min_gap > self.resolution and self.max_overlap > -self.resolution

    def lower(self) -> Profile:
        return self.members[0]

    def upper(self) -> Profile:
        return self.members[-1]

    def values_at(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.vstack([m(x) for m in self.members])

    def psi_array(self, x, y, resolution: float = 0.0):
        """Vectorised Psi. Returns ``(psi, inside)``; psi is NaN outside D.

        With ``resolution > 0`` a point is treated as unlabelled (outside)
        when two or more members pass within ``resolution`` of it: those
        members cannot be told apart there and the label is noise.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        vals = self.values_at(x)
        M = vals.shape[0]
        inside = (y > vals[0]) & (y <= vals[-1])
        out = np.full(x.shape, np.nan)
        if M == 1:
            out[y == vals[0]] = self.q0s[0]
            return out, y == vals[0]
        m = np.clip(np.sum(vals <= y[None, :], axis=0) - 1, 0, M - 2)
        cols = np.arange(x.size)
        lo_v, hi_v = vals[m, cols], vals[m + 1, cols]
        q_lo, q_hi = self.q0s[m], self.q0s[m + 1]
        denom = hi_v - lo_v
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(denom > 0, (y - lo_v) / denom, 0.0)
        frac = np.clip(frac, 0.0, 1.0)
        est = q_lo + frac * (q_hi - q_lo)
        if resolution > 0:
            inside &= np.sum(np.abs(vals - y[None, :]) <= resolution, axis=0) < 2
        out[inside] = est[inside]
        return out, inside

    def to_dir(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "index.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("q0,filename\n")
            for k, (q0, m) in enumerate(zip(self.q0s, self.members)):
                name = f"member_{k:03d}.csv"
                m.to_csv(os.path.join(directory, name))
                fh.write(f"{q0:.17g},{name}\n")


def _member(model, road, ell, fbar, q0, x_min, w, rho_plus, opts, case_label):
    h = (opts or MarchOptions()).step(ell)
    if abs(q0 - rho_plus) <= 1e-12:
        init = build_initial_data("constant", rho_plus=rho_plus, ell=ell, h=h,
                                  x_max=max(4 * ell / rho_plus, w.x_max if w is not None else 0.0))
    else:
        init = build_initial_data("shiftedW", w=w, q0=q0, h=h)
    return solve_q_backward(init, model, road, ell, x_min, opts, fbar=fbar, case_label=case_label)


def _member_task(args):
    return _member(*args)


def build_family(model, road, ell, fbar, q0_grid: Sequence[float], x_min, *,
                 rho_plus=None, rho_minus=None, w: Optional[Profile] = None, opts=None,
                 case_label=None, jobs: int = 1, residual_points=50,
                 resolution: float = 1e-6) -> ProfileFamily:
    """Solve one profile per ``q0`` and check that their graphs never cross.

    Per-member failures (blow-up, out-of-range anchors) are collected in
    ``failures`` instead of aborting the family. ``min_gap`` is the smallest
    separation that any adjacent pair reaches somewhere on the common grid;
    ``max_overlap`` is the most negative adjacent gap anywhere. Members merge
    in the tails, where a slightly negative gap is discretisation error.
    """
    q0_grid = sorted(float(q) for q in q0_grid)
    if rho_plus is None:
        rho_plus = max(_m.fbar_roots(model, road.v_plus, fbar))
    if w is None and any(abs(q - rho_plus) > 1e-12 for q in q0_grid):
        w = solve_w_profile(model, road.v_plus, fbar, ell, opts)
    tasks = [(model, road, ell, fbar, q, x_min, w, rho_plus, opts, case_label) for q in q0_grid]
    results = []
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_member_task, t) for t in tasks]
            for q, fut in zip(q0_grid, futures):
                try:
                    results.append((q, fut.result(), None))
                except Exception as exc:  # collected per member
                    results.append((q, None, exc))
    else:
        for q, t in zip(q0_grid, tasks):
            try:
                results.append((q, _member_task(t), None))
            except Exception as exc:  # collected per member
                results.append((q, None, exc))

    members, q0s, failures, diags = [], [], [], []
    for q, prof, exc in results:
        if exc is not None:
            failures.append((q, exc))
            continue
        members.append(prof)
        q0s.append(q)
        diag = {"q0": q}
        try:
            diag["residual"] = max_periodic_residual(prof, model, road, ell, fbar, n=residual_points)
        except SpanError:
            diag["residual"] = float("nan")
        neg = prof.values[prof.grid <= 0]
        diag["monotone"] = bool(np.all(np.diff(prof.values) >= -1e-10))
        diag["monotone_left"] = bool(np.all(np.diff(neg) >= -1e-10))
        try:
            diag["transversality"] = transversality_report(prof, model, road, ell)
        except NotApplicable:
            diag["transversality"] = None
        diags.append(diag)

    fam = ProfileFamily(members, np.array(q0s), None, road, model, ell, fbar, failures, diags,
                        resolution=resolution)
    if rho_minus is not None:
        fam.q0_range = _m.classify_case(model, road, rho_minus, rho_plus).q0_range
    if len(members) >= 2:
        lo = max(m.x_min for m in members)
        hi = min(m.x_max for m in members)
        grid = members[0].grid
        common = grid[(grid >= lo) & (grid <= hi)]
        vals = fam.values_at(common)
        gaps = np.diff(vals, axis=0)
        fam.max_overlap = float(gaps.min())
        fam.min_gap = float(gaps.max(axis=1).min())
    return fam


def psi(family: ProfileFamily, x: float, y: float) -> float:
    """Value at 0 of the family member passing through ``(x, y)``."""
    out, inside = family.psi_array([x], [y])
    if not inside[0]:
        raise OutsideD(f"({x:.6g}, {y:.6g}) outside the band spanned by the family")
    return float(out[0])


# ---------------------------------------------------------------------------
# Case scans: which candidate data on x >= 0 produce admissible profiles
# ---------------------------------------------------------------------------


@dataclass
class Attempt:
    q0: float
    init_kind: str
    outcome: str  # accepted | blowup | right_mismatch | left_mismatch | residual
    detail: str = ""
    profile: Optional[Profile] = None
    left_asymptote: float = float("nan")
    residual: float = float("nan")


@dataclass
class CaseScan:
    report: object
    attempts: List[Attempt]

    @property
    def accepted(self) -> List[Attempt]:
        return [a for a in self.attempts if a.outcome == "accepted"]


def scan_case(model, road, ell, rho_minus, rho_plus, *, n_anchors=10, x_min=None,
              opts=None, asymptote_tol=1e-3, residual_tol=1e-3, residual_points=20) -> CaseScan:
    """Try every candidate datum on x >= 0 and keep those that connect
    ``rho_minus`` to ``rho_plus``.

    Anchors are ``n_anchors`` values of Q(0) spread over ``[rho1+, rho2+]`` of
    the right flux: interior anchors are shifts of the wave W, the endpoints
    are the two constant states. An attempt is accepted only if the backward
    solve survives to ``x_min``, its right limit is ``rho_plus``, its left
    limit is ``rho_minus`` and its periodic residual stays below
    ``residual_tol``.
    """
    report = _m.classify_case(model, road, rho_minus, rho_plus)
    fbar = report.fbar
    x_min = x_min if x_min is not None else -40 * ell
    r1p, r2p = report.rho1_plus, report.rho2_plus
    anchors = np.linspace(r1p, r2p, n_anchors)
    w = None
    if not report.degenerate:
        w = solve_w_profile(model, road.v_plus, fbar, ell, opts)
    h = (opts or MarchOptions()).step(ell)
    attempts = []
    for k, q0 in enumerate(anchors):
        q0 = float(q0)
        if k == 0 or k == n_anchors - 1 or w is None:
            init = build_initial_data("constant", rho_plus=q0, ell=ell, h=h,
                                      x_max=max(4 * ell / q0, 4 * ell / r1p))
            kind = "constant"
            right_limit = q0
        else:
            init = build_initial_data("shiftedW", w=w, q0=q0, h=h)
            kind = "shiftedW"
            right_limit = r2p
        att = Attempt(q0, kind, "accepted")
        try:
            prof = solve_q_backward(init, model, road, ell, x_min, opts, fbar=fbar,
                                    case_label=report.label)
        except BlowUp as exc:
            att.outcome, att.detail = "blowup", str(exc)
            attempts.append(att)
            continue
        att.profile = prof
        att.left_asymptote, _ = asymptote(prof, "left", min_span=0.0)
        att.residual = max_periodic_residual(prof, model, road, ell, fbar, n=residual_points)
        if abs(right_limit - rho_plus) > asymptote_tol:
            att.outcome = "right_mismatch"
            att.detail = f"right limit {right_limit:.6g} != rho+ {rho_plus:.6g}"
        elif abs(att.left_asymptote - rho_minus) > asymptote_tol:
            att.outcome = "left_mismatch"
            att.detail = f"left limit {att.left_asymptote:.6g} != rho- {rho_minus:.6g}"
        elif att.residual > residual_tol:
            att.outcome = "residual"
            att.detail = f"periodic residual {att.residual:.3g}"
        attempts.append(att)
    return CaseScan(report, attempts)
