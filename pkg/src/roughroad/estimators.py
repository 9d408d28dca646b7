"""Estimator-style wrappers around the profile and viscous solvers.

``fit`` runs the solver for the configured road and densities; ``predict``
evaluates the fitted profile at the positions in ``X``. Parameters follow
the scikit-learn conventions, so ``get_params``/``set_params``/``clone`` work.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import NoProfile, ValidationError
from .model import FluxModel, RoadCondition, Verdict, classify_case
from .profile import MarchOptions, build_family, build_initial_data, solve_q_backward, solve_w_profile
from .viscous import stationary_profile, viscous_existence

__all__ = ["TravelingWave", "StationaryProfile", "PsiTransformer", "ViscousProfileEstimator"]


def _model(flux):
    if isinstance(flux, FluxModel):
        return flux
    return FluxModel.by_name(flux)


def _positions(X):
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValidationError("X must hold one position per row")
        X = X[:, 0]
    return X


class TravelingWave(BaseEstimator):
    """Uniform-road wave from the subcritical to the supercritical root."""

    def __init__(self, flux="lw", speed=1.0, fbar=0.1875, ell=0.2, h=None):
        self.flux = flux
        self.speed = speed
        self.fbar = fbar
        self.ell = ell
        self.h = h

    def fit(self, X=None, y=None):
        self.profile_ = solve_w_profile(_model(self.flux), self.speed, self.fbar, self.ell,
                                        MarchOptions(h=self.h))
        self.rho_low_ = self.profile_.meta["rho_low"]
        self.rho_high_ = self.profile_.meta["rho_high"]
        return self

    def predict(self, X):
        check_is_fitted(self, "profile_")
        return self.profile_(_positions(X))


class StationaryProfile(BaseEstimator):
    """Profile across the jump connecting ``rho_minus`` to ``rho_plus``.

    ``q0`` selects the member when the case admits many; ``None`` takes the
    constant datum ``rho_plus`` on x >= 0.
    """

    def __init__(self, flux="lw", v_minus=2.0, v_plus=1.0, rho_minus=None, rho_plus=None,
                 ell=0.2, q0=None, x_min=-8.0, h=None):
        self.flux = flux
        self.v_minus = v_minus
        self.v_plus = v_plus
        self.rho_minus = rho_minus
        self.rho_plus = rho_plus
        self.ell = ell
        self.q0 = q0
        self.x_min = x_min
        self.h = h

    def fit(self, X=None, y=None):
        model = _model(self.flux)
        road = RoadCondition(self.v_minus, self.v_plus)
        if self.rho_minus is None or self.rho_plus is None:
            raise ValidationError("rho_minus and rho_plus are required")
        report = classify_case(model, road, self.rho_minus, self.rho_plus)
        if report.verdict is Verdict.NONE:
            raise NoProfile(f"case {report.label}: no stationary profile connects the two states")
        opts = MarchOptions(h=self.h)
        h = opts.step(self.ell)
        q0 = self.rho_plus if self.q0 is None else self.q0
        if abs(q0 - self.rho_plus) <= 1e-12:
            init = build_initial_data("constant", rho_plus=self.rho_plus, ell=self.ell, h=h)
        else:
            w = solve_w_profile(model, road.v_plus, report.fbar, self.ell, opts)
            init = build_initial_data("shiftedW", w=w, q0=q0, h=h)
        self.report_ = report
        self.profile_ = solve_q_backward(init, model, road, self.ell, self.x_min, opts,
                                         fbar=report.fbar, case_label=report.label)
        return self

    def predict(self, X):
        check_is_fitted(self, "profile_")
        return self.profile_(_positions(X))


class PsiTransformer(TransformerMixin, BaseEstimator):
    """Maps points ``(x, y)`` to the Q(0)-label of the profile through them.

    Points outside the band spanned by the family (or where members cannot
    be told apart at ``resolution``) map to NaN.
    """

    def __init__(self, flux="lw", v_minus=2.0, v_plus=1.0, rho_minus=None, rho_plus=None,
                 ell=0.2, n_members=20, x_min=-8.0, resolution=1e-9, lower_offset=1e-4):
        self.flux = flux
        self.v_minus = v_minus
        self.v_plus = v_plus
        self.rho_minus = rho_minus
        self.rho_plus = rho_plus
        self.ell = ell
        self.n_members = n_members
        self.x_min = x_min
        self.resolution = resolution
        self.lower_offset = lower_offset

    def fit(self, X=None, y=None):
        model = _model(self.flux)
        road = RoadCondition(self.v_minus, self.v_plus)
        report = classify_case(model, road, self.rho_minus, self.rho_plus)
        if report.verdict is not Verdict.INFINITELY_MANY:
            raise NoProfile(f"case {report.label} has no one-parameter family of profiles")
        lo, hi = report.q0_range.lo + self.lower_offset, report.q0_range.hi
        grid = np.linspace(lo, hi, self.n_members)
        self.family_ = build_family(model, road, self.ell, report.fbar, grid, self.x_min,
                                    rho_plus=self.rho_plus, rho_minus=self.rho_minus,
                                    case_label=report.label)
        self.report_ = report
        return self

    def transform(self, X):
        check_is_fitted(self, "family_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValidationError("X must have two columns: position and density")
        out, _ = self.family_.psi_array(X[:, 0], X[:, 1], self.resolution)
        return out[:, None]


class ViscousProfileEstimator(BaseEstimator):
    """Stationary viscous profile; the anchor defaults to the existence witness."""

    def __init__(self, flux="lw", v_minus=2.0, v_plus=1.0, rho_minus=None, rho_plus=None,
                 epsilon=0.2, anchor=None, xspan=None):
        self.flux = flux
        self.v_minus = v_minus
        self.v_plus = v_plus
        self.rho_minus = rho_minus
        self.rho_plus = rho_plus
        self.epsilon = epsilon
        self.anchor = anchor
        self.xspan = xspan

    def fit(self, X=None, y=None):
        model = _model(self.flux)
        road = RoadCondition(self.v_minus, self.v_plus)
        self.existence_ = viscous_existence(model, road, self.rho_minus, self.rho_plus)
        anchor = self.anchor
        if anchor is None:
            if not self.existence_.exists:
                raise NoProfile("no monotone viscous profile connects the two states")
            anchor = self.existence_.rho_hat
        fbar = float(road.v_plus * self.rho_plus * model.phi(self.rho_plus))
        self.profile_ = stationary_profile(model, road, self.epsilon, fbar, anchor, self.xspan)
        return self

    def predict(self, X):
        check_is_fitted(self, "profile_")
        return self.profile_(_positions(X))
