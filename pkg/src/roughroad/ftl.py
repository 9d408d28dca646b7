"""Follow-the-Leader microscopic dynamics on a road with a speed-limit jump.

Car ``i`` at ``z_i`` drives at ``k(z_i) * phi(rho_i)`` with the discrete
density ``rho_i = ell / (z_{i+1} - z_i)``. The lead car has no leader and
keeps a fixed ``front_boundary_density``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .exceptions import AlignmentError, DomainError, SpacingViolation, ValidationError
from .model import RoadCondition

__all__ = [
    "CarEnsemble",
    "Trajectory",
    "SimOptions",
    "discrete_density",
    "ftl_rhs",
    "simulate",
    "riemann_initial",
    "ensemble_from_profile",
    "tv_psi",
    "periodicity_check",
]

_SPACING_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class CarEnsemble:
    """Ordered car positions. ``index_offset`` is the label of the rear car."""

    positions: np.ndarray
    ell: float
    front_boundary_density: float
    index_offset: int = 0

    def __post_init__(self):
        z = np.array(self.positions, dtype=float)
        if z.ndim != 1 or z.size < 1:
            raise ValidationError("positions must be a non-empty 1-D array")
        if self.ell <= 0:
            raise ValidationError("car length must be positive")
        if not (0 < self.front_boundary_density <= 1):
            raise DomainError("front boundary density must lie in (0, 1]")
        _check_spacing(z, self.ell, self.index_offset)
        z.setflags(write=False)
        object.__setattr__(self, "positions", z)

    @property
    def indices(self):
        return self.index_offset + np.arange(self.positions.size)

    @property
    def densities(self):
        return discrete_density(self)

    def __len__(self):
        return self.positions.size


def _check_spacing(z, ell, offset=0):
    gaps = np.diff(z)
    bad = np.nonzero(gaps < ell * (1 - _SPACING_SLACK))[0]
    if bad.size:
        j = int(bad[0])
        raise SpacingViolation(offset + j, float(gaps[j]), ell)


def _densities(z, ell, front):
    rho = np.empty_like(z)
    rho[:-1] = ell / np.diff(z)
    rho[-1] = front
    return rho


def discrete_density(ensemble: CarEnsemble) -> np.ndarray:
    z = ensemble.positions
    _check_spacing(z, ensemble.ell, ensemble.index_offset)
    return np.minimum(_densities(z, ensemble.ell, ensemble.front_boundary_density), 1.0)


def _speeds(road):
    if isinstance(road, RoadCondition):
        return road.v_minus, road.v_plus
    V = float(road)
    return V, V


def ftl_rhs(ensemble: CarEnsemble, model, road) -> np.ndarray:
    vm, vp = _speeds(road)
    z = ensemble.positions
    k = np.where(z < 0, vm, vp)
    return k * model.phi(discrete_density(ensemble))


@dataclass(frozen=True)
class SimOptions:
    """``event_resolved``: split steps where a car crosses x = 0.
    ``record_every``: store every n-th step (the last step is always stored)."""

    event_resolved: bool = True
    record_every: int = 1
    event_tol: float = 1e-10
    check_spacing: bool = True


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (n_records, n_cars)
    densities: np.ndarray
    ell: float
    front_boundary_density: float
    index_offset: int = 0
    events: List[tuple] = field(default_factory=list)

    @property
    def indices(self):
        return self.index_offset + np.arange(self.positions.shape[1])

    def snapshot(self, k: int) -> CarEnsemble:
        return CarEnsemble(self.positions[k], self.ell, self.front_boundary_density, self.index_offset)

    def index_at(self, t: float, tol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise AlignmentError(f"time {t:.12g} is not on the recorded grid")
        return k

    def to_csv(self, path) -> None:
        idx = self.indices
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,i,z,rho\n")
            for t, zs, rs in zip(self.times, self.positions, self.densities):
                for i, z, r in zip(idx, zs, rs):
                    fh.write(f"{t:.17g},{i},{z:.17g},{r:.17g}\n")

    def events_to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,i,kind\n")
            for t, i, kind in self.events:
                fh.write(f"{t:.17g},{i},{kind}\n")


def simulate(ensemble0: CarEnsemble, model, road, T: float, dt: float,
             opts: Optional[SimOptions] = None) -> Trajectory:
    """Classical RK4 in time for all cars at once.

    With event resolution each car's speed limit is frozen to its side of x = 0
    for the duration of a step; a step in which some car reaches x = 0 is cut
    at the earliest crossing (bisection on the step length) and resumed with
    the updated side.
    """
    opts = opts or SimOptions()
    if dt <= 0 or T < 0:
        raise ValidationError("need dt > 0 and T >= 0")
    if opts.record_every < 1:
        raise ValidationError("record_every must be >= 1")
    vm, vp = _speeds(road)
    ell = ensemble0.ell
    front = ensemble0.front_boundary_density
    offset = ensemble0.index_offset
    phi = model.phi
    z = np.array(ensemble0.positions, dtype=float)

    def rhs(zz, k):
        rho = np.empty_like(zz)
        rho[:-1] = ell / np.diff(zz)
        rho[-1] = front
        if k is None:
            k = np.where(zz < 0, vm, vp)
        return k * phi(np.minimum(rho, 1.0))

    def rk4(zz, h, k):
        k1 = rhs(zz, k)
        k2 = rhs(zz + 0.5 * h * k1, k)
        k3 = rhs(zz + 0.5 * h * k2, k)
        k4 = rhs(zz + h * k3, k)
        return zz + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    times = [0.0]
    rec_z = [z.copy()]
    events = []
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        n_steps = int(np.ceil(T / dt))
    t = 0.0
    for step in range(1, n_steps + 1):
        t_end = min(step * dt, T) if step == n_steps else step * dt
        while t < t_end - 1e-15:
            h = t_end - t
            if not opts.event_resolved:
                z = rk4(z, h, None)
                t = t_end
                break
            k = np.where(z < 0, vm, vp)
            trial = rk4(z, h, k)
            crossing = (z < 0) & (trial >= 0)
            if not crossing.any():
                z, t = trial, t_end
                break
            lo, hi = 0.0, h
            while hi - lo > opts.event_tol:
                mid = 0.5 * (lo + hi)
                zm = rk4(z, mid, k)
                if np.any((z < 0) & (zm >= 0)):
                    hi = mid
                else:
                    lo = mid
            z_new = rk4(z, hi, k)
            crossed = np.nonzero((z < 0) & (z_new >= 0))[0]
            t += hi
            for j in crossed:
                events.append((t, offset + int(j), "car_cross"))
                if j > 0:
                    events.append((t, offset + int(j) - 1, "leader_cross"))
            z = z_new
        if opts.check_spacing:
            _check_spacing(z, ell, offset)
        if step % opts.record_every == 0 or step == n_steps:
            times.append(t_end)
            rec_z.append(z.copy())
    pos = np.array(rec_z)
    dens = np.array([_densities(p, ell, front) for p in pos])
    return Trajectory(np.array(times), pos, dens, ell, front, offset, events)


def riemann_initial(rho_L, rho_R, ell, x0=0.0, n_left=600, n_right=600) -> CarEnsemble:
    """Cars at spacing ``ell/rho_R`` from 0 forward and ``ell/rho_L`` behind,
    the rear lattice shifted forward by ``x0``."""
    for r in (rho_L, rho_R):
        if not (0 < r < 1):
            raise DomainError(f"density {r} must lie in (0, 1)")
    if ell <= 0:
        raise ValidationError("car length must be positive")
    left = np.arange(-n_left, 0) * ell / rho_L + x0
    right = np.arange(0, n_right) * ell / rho_R
    return CarEnsemble(np.concatenate([left, right]), ell, rho_R, index_offset=-n_left)


def ensemble_from_profile(profile, z0, n_back, n_fwd) -> CarEnsemble:
    """Cars placed so that each density equals the profile at its position."""
    from .profile import generate_positions

    z = generate_positions(profile, z0, profile.ell, n_back, n_fwd)
    return CarEnsemble(z, profile.ell, float(profile(z[-1])), index_offset=-n_back)


def tv_psi(snapshot, family, densities=None, exclude: int = 0, resolution: float = 1e-9):
    """Total variation of the family label along the cars inside the band.

    Returns ``(tv, outside_count)``. Cars outside the band are skipped and the
    variation is taken over the remaining sequence.
    """
    if isinstance(snapshot, CarEnsemble):
        z = snapshot.positions
        rho = snapshot.densities if densities is None else np.asarray(densities)
    else:
        z, rho = (np.asarray(a, dtype=float) for a in snapshot)
    if exclude:
        z, rho = z[exclude:-exclude], rho[exclude:-exclude]
    vals, inside = family.psi_array(z, rho, resolution)
    labels = vals[inside]
    tv = float(np.sum(np.abs(np.diff(labels)))) if labels.size > 1 else 0.0
    return tv, int(np.count_nonzero(~inside))


def periodicity_check(trajectory: Trajectory, t_p: float, exclude: int = 20, tol=1e-9) -> float:
    """``max |z_i(t + t_p) - z_{i+1}(t)|`` over recorded times and interior cars."""
    times = trajectory.times
    if times[-1] - times[0] < t_p - tol:
        raise AlignmentError("trajectory shorter than one period")
    dt_rec = np.diff(times)
    ratio = t_p / np.median(dt_rec)
    shift = int(round(ratio))
    if shift < 1 or abs(ratio - shift) > 1e-6 * max(1.0, ratio):
        raise AlignmentError(f"period {t_p:.12g} is not a multiple of the recording interval")
    if not np.allclose(times[shift:] - times[:-shift], t_p, rtol=0, atol=tol * max(1.0, t_p)):
        raise AlignmentError("recorded times are not uniformly spaced")
    z = trajectory.positions
    ncar = z.shape[1]
    lo, hi = exclude, ncar - 1 - exclude
    if hi <= lo:
        raise ValidationError("too few cars after excluding the boundary layers")
    later = z[shift:, lo:hi]
    earlier = z[:-shift, lo + 1:hi + 1]
    return float(np.max(np.abs(later - earlier)))
