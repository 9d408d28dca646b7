"""Vanishing-viscosity counterpart: stationary viscous profiles and a
finite-volume solver for ``rho_t + f(k(x), rho)_x = eps rho_xx``."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import model as _m
from .exceptions import BlowUp, DomainError, ValidationError

__all__ = [
    "ViscousProfile",
    "ViscousExistence",
    "PdeState",
    "PdeOptions",
    "viscous_existence",
    "stationary_profile",
    "pde_solve",
    "riemann_state",
    "write_pde_csv",
]


@dataclass(frozen=True)
class ViscousExistence:
    """Outcome of the monotone-profile test. Unpacks as ``(exists, rho_hat)``."""

    exists: bool
    rho_hat: Optional[float]
    feasible_lo: Optional[float] = None
    feasible_hi: Optional[float] = None
    direction: str = ""

    def __iter__(self):
        return iter((self.exists, self.rho_hat))


def viscous_existence(model, road, rho_minus, rho_plus, n_grid: int = 20001) -> ViscousExistence:
    """Scan anchors ``rho_hat`` between ``rho_minus`` and ``rho_plus``.

    Increasing data need ``f_-(rho) > fbar`` on ``(rho_minus, rho_hat]`` and
    ``f_+(rho) > fbar`` on ``[rho_hat, rho_plus)``; decreasing data need the
    reversed inequalities on ``[rho_hat, rho_minus)`` and
    ``(rho_plus, rho_hat]``. The end states themselves satisfy ``f = fbar``
    and are left out of the strict tests. The witness is the midpoint of the
    feasible set.
    """
    rh = _m.check_rankine_hugoniot(model, road, rho_minus, rho_plus)
    fbar = rh.fbar
    vm, vp = road.v_minus, road.v_plus
    g = np.linspace(rho_minus, rho_plus, n_grid)
    fm = _m.flux(model, vm, g) - fbar
    fp = _m.flux(model, vp, g) - fbar
    sign = 1.0 if rho_plus > rho_minus else -1.0
    # left condition at anchor j: strict inequality on g[1..j]
    ok_left = np.empty(n_grid, dtype=bool)
    ok_left[0] = True
    ok_left[1:] = np.cumprod(sign * fm[1:] > 0).astype(bool)
    # right condition at anchor j: strict inequality on g[j..n-2]
    ok_right = np.empty(n_grid, dtype=bool)
    ok_right[-1] = True
    ok_right[:-1] = np.cumprod((sign * fp[:-1] > 0)[::-1])[::-1].astype(bool)
    feasible = np.nonzero(ok_left & ok_right)[0]
    direction = "increasing" if sign > 0 else "decreasing"
    if feasible.size == 0:
        return ViscousExistence(False, None, direction=direction)
    a, b = g[feasible[0]], g[feasible[-1]]
    lo, hi = min(a, b), max(a, b)
    return ViscousExistence(True, 0.5 * (lo + hi), lo, hi, direction)


@dataclass(frozen=True, eq=False)
class ViscousProfile:
    grid: np.ndarray
    values: np.ndarray
    epsilon: float
    fbar: float
    anchor: float
    road: object = None
    model: object = None

    def __call__(self, x):
        return np.interp(x, self.grid, self.values)

    def ode_residual(self) -> np.ndarray:
        """Centred difference minus right-hand side at interior nodes, node 0 excluded."""
        x, r = self.grid, self.values
        d = (r[2:] - r[:-2]) / (x[2:] - x[:-2])
        xm = x[1:-1]
        k = np.where(xm < 0, self.road.v_minus, self.road.v_plus)
        rhs = (k * r[1:-1] * self.model.phi(r[1:-1]) - self.fbar) / self.epsilon
        res = np.abs(d - rhs)
        # the slope jumps at x = 0; the centred difference straddles it there
        res[np.abs(xm) < 0.5 * (x[1] - x[0])] = 0.0
        return res

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("x,rho\n")
            for x, r in zip(self.grid, self.values):
                fh.write(f"{x:.17g},{r:.17g}\n")


def _half(model, V, fbar, eps, rho0, length, h, direction):
    def rhs(_x, y):
        return [direction * (V * y[0] * float(model.phi(y[0])) - fbar) / eps]

    def leave_low(_x, y):
        return y[0]

    def leave_high(_x, y):
        return 1.0 - y[0]

    leave_low.terminal = leave_high.terminal = True
    n = int(math.ceil(length / h))
    s = np.linspace(0.0, n * h, n + 1)
    if abs(V * rho0 * float(model.phi(rho0)) - fbar) <= 1e-14:
        # anchor is an equilibrium of this half; integrating would only amplify roundoff
        return s, np.full(s.size, float(rho0))
    sol = solve_ivp(rhs, (0.0, s[-1]), [rho0], method="DOP853", t_eval=s,
                    rtol=1e-12, atol=1e-14, events=(leave_low, leave_high))
    if sol.status == 1:
        where = float(sol.t_events[0][0] if sol.t_events[0].size else sol.t_events[1][0])
        raise BlowUp(direction * where, "viscous profile left [0, 1]")
    if not sol.success:
        raise BlowUp(direction * s[-1], sol.message)
    return s, sol.y[0]


def stationary_profile(model, road, epsilon, fbar, rho_at_zero, xspan=None, h=None) -> ViscousProfile:
    """Solve ``eps rho' = f(k(x), rho) - fbar`` outward from ``rho(0)``.

    Forward on ``[0, xspan]`` with ``V+`` and backward on ``[-xspan, 0]`` with
    ``V-``. Default span ``40 eps / c_hat0``, default step ``eps / 1000``.
    """
    if epsilon <= 0:
        raise ValidationError("viscosity must be positive")
    if not (0 < rho_at_zero < 1):
        raise DomainError("anchor density must lie in (0, 1)")
    xspan = xspan if xspan is not None else 40 * epsilon / model.c_hat0
    h = h if h is not None else epsilon / 1000.0
    sr, rr = _half(model, road.v_plus, fbar, epsilon, rho_at_zero, xspan, h, +1)
    sl, rl = _half(model, road.v_minus, fbar, epsilon, rho_at_zero, xspan, h, -1)
    grid = np.concatenate([-sl[:0:-1], sr])
    values = np.concatenate([rl[:0:-1], rr])
    return ViscousProfile(grid, values, epsilon, fbar, rho_at_zero, road, model)


# ---------------------------------------------------------------------------
# Time-dependent solver
# ---------------------------------------------------------------------------


@dataclass
class PdeState:
    """Cell averages on a uniform grid; ``left``/``right`` are the far-field
    states held in the ghost cells. ``boundary_mass`` accumulates the net
    mass that entered through the two ends."""

    x: np.ndarray
    rho: np.ndarray
    epsilon: float
    time: float = 0.0
    left: Optional[float] = None
    right: Optional[float] = None
    boundary_mass: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        if self.x.ndim != 1 or self.x.shape != self.rho.shape or self.x.size < 3:
            raise ValidationError("cell centres and values must be 1-D arrays of equal length >= 3")
        d = np.diff(self.x)
        if np.any(d <= 0) or np.ptp(d) > 1e-9 * d[0]:
            raise ValidationError("cell centres must be uniformly spaced")
        if self.epsilon <= 0:
            raise ValidationError("viscosity must be positive")
        _check_range(self.rho)
        if self.left is None:
            self.left = float(self.rho[0])
        if self.right is None:
            self.right = float(self.rho[-1])

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def mass(self) -> float:
        return float(np.sum(self.rho) * self.dx)


def _check_range(rho):
    bad = np.nonzero((rho < -1e-12) | (rho > 1 + 1e-12) | ~np.isfinite(rho))[0]
    if bad.size:
        j = int(bad[0])
        raise DomainError(f"density {rho[j]!r} at cell {j} outside [0, 1]")


@dataclass(frozen=True)
class PdeOptions:
    cfl: float = 0.4
    record_times: Sequence[float] = ()
    check_max_principle: bool = False


def riemann_state(rho_L, rho_R, epsilon, x_lo=-3.0, x_hi=3.0, dx=0.002) -> PdeState:
    """Piecewise-constant data with the jump at x = 0, which is a cell edge."""
    n_left = int(round(-x_lo / dx))
    n_right = int(round(x_hi / dx))
    x = (np.arange(-n_left, n_right) + 0.5) * dx
    rho = np.where(x < 0, rho_L, rho_R).astype(float)
    return PdeState(x, rho, epsilon, 0.0, rho_L, rho_R)


def pde_solve(init: PdeState, model, road, T, opts: Optional[PdeOptions] = None) -> List[PdeState]:
    """March to time ``T`` with a local Lax-Friedrichs flux and explicit diffusion.

    Each cell uses the speed limit at its centre; at an interface the two
    fluxes are evaluated with their own cell's limit and the dissipation is
    the larger of the two local wave speeds, which keeps the scheme
    conservative across the jump. Returns the states at ``opts.record_times``
    (plus ``T``).
    """
    opts = opts or PdeOptions()
    if T < 0:
        raise ValidationError("final time must be non-negative")
    if isinstance(road, _m.RoadCondition):
        vm, vp = road.v_minus, road.v_plus
    else:
        vm = vp = float(road)
    eps = init.epsilon
    dx = init.dx
    phi = model.phi
    dphi = model.dphi
    # ghost cells extend the lattice by one cell at each end
    xg = np.concatenate([[init.x[0] - dx], init.x, [init.x[-1] + dx]])
    k = np.where(xg < 0, vm, vp)
    rho = np.concatenate([[init.left], init.rho, [init.right]])
    lo_bound, hi_bound = float(init.rho.min()), float(init.rho.max())
    t = init.time
    bmass = init.boundary_mass
    targets = sorted({float(s) for s in opts.record_times if init.time < s < T} | {float(T)})
    out = []
    for target in targets:
        while t < target - 1e-14:
            f = k * rho * phi(rho)
            a = np.abs(k * (phi(rho) + rho * dphi(rho)))
            alpha = np.maximum(a[:-1], a[1:])
            amax = float(alpha.max())
            dt = opts.cfl * min(dx / amax if amax > 0 else np.inf, dx * dx / (2 * eps))
            dt = min(dt, target - t)
            flux = 0.5 * (f[:-1] + f[1:]) - 0.5 * alpha * (rho[1:] - rho[:-1]) \
                - eps * (rho[1:] - rho[:-1]) / dx
            rho[1:-1] -= dt / dx * (flux[1:] - flux[:-1])
            bmass += dt * (flux[0] - flux[-1])
            t += dt
            _check_range(rho[1:-1])
            if opts.check_max_principle:
                inner = rho[1:-1]
                if inner.min() < lo_bound - 1e-12 or inner.max() > hi_bound + 1e-12:
                    raise DomainError(f"maximum principle violated at t={t:.6g}")
        out.append(PdeState(init.x.copy(), rho[1:-1].copy(), eps, t, init.left, init.right, bmass))
    return out


def step_conservation_errors(init: PdeState, model, road, n_steps: int, cfl: float = 0.4):
    """Per-step ``|dx * sum(d rho) - dt * (F_in - F_out)|`` over ``n_steps``."""
    errs = []
    state = init
    for _ in range(n_steps):
        vm, vp = (road.v_minus, road.v_plus) if isinstance(road, _m.RoadCondition) else (road, road)
        amax = max(vm, vp) * float(np.max(np.abs(model.phi(state.rho) + state.rho * model.dphi(state.rho))))
        dt = cfl * min(state.dx / amax, state.dx ** 2 / (2 * state.epsilon))
        nxt = pde_solve(state, model, road, state.time + dt, PdeOptions(cfl=cfl))[-1]
        dm = nxt.mass - state.mass
        db = nxt.boundary_mass - state.boundary_mass
        errs.append(abs(dm - db))
        state = nxt
    return np.array(errs)


def write_pde_csv(path, states: Sequence[PdeState]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,x,rho\n")
        for s in states:
            for x, r in zip(s.x, s.rho):
                fh.write(f"{s.time:.17g},{x:.17g},{r:.17g}\n")
