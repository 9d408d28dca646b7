import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from roughroad import (
    BlowUp,
    DomainError,
    NotApplicable,
    OutOfRange,
    OutsideD,
    Profile,
    RangeExhausted,
    SpanTooShort,
    ValidationError,
    asymptote,
    build_family,
    build_initial_data,
    generate_positions,
    leader_position,
    periodic_residual,
    psi,
    solve_q_backward,
    solve_w_profile,
    transversality_report,
)
from roughroad.ftl import CarEnsemble
from roughroad.profile import MarchOptions, ProfileFamily, max_periodic_residual, travel_time

from conftest import ELL, FBAR


def constant_profile(c, lo=-2.0, hi=4.0, n=601):
    return Profile(np.linspace(lo, hi, n), np.full(n, c), ELL)


# -- leader position --------------------------------------------------------

def test_leader_position_examples():
    assert leader_position(-0.4, 0.5, ELL) == 0.0
    assert leader_position(0.0, 0.75, ELL) == pytest.approx(0.26667, abs=1e-5)
    assert leader_position(-1.0, 1 - 1e-12, ELL) == pytest.approx(-0.8, abs=1e-10)
    with pytest.raises(DomainError):
        leader_position(0.0, 1.0, ELL)
    with pytest.raises(DomainError):
        leader_position(0.0, 0.0, ELL)


@given(x=st.floats(-50, 50), q=st.floats(1e-6, 1 - 1e-6, exclude_max=True))
def test_leader_is_more_than_one_car_ahead(x, q):
    assert leader_position(x, q, ELL) - x > ELL * (1 - 1e-12)


# -- W profile --------------------------------------------------------------

def test_w_profile_normalisation_and_limits(w_profile):
    w = w_profile
    assert abs(w(0.0) - 0.5) <= 1e-10
    assert np.all(np.diff(w.values) >= -1e-10)
    assert w.meta["rho_low"] == pytest.approx(0.25) and w.meta["rho_high"] == pytest.approx(0.75)
    assert abs(w(w.x_min) - 0.25) < 1e-3 and abs(w(w.x_max) - 0.75) < 1e-3


def test_w_profile_flattens_near_the_flux_maximum():
    w = solve_w_profile(__import__("roughroad").FluxModel.lighthill_whitham(), 1.0, 0.24, ELL)
    assert w(w.x_min) == pytest.approx(0.4, abs=1e-3)
    assert w(w.x_max) == pytest.approx(0.6, abs=1e-3)
    assert w.values.max() - w.values.min() < 0.21


def test_initial_data(w_profile):
    flat = build_initial_data("constant", rho_plus=0.75, ell=ELL)
    assert np.all(flat.values == 0.75)
    zero = build_initial_data("shiftedW", w=w_profile, q0=0.5)
    assert abs(zero.meta["shift"]) < 1e-9
    shifted = build_initial_data("shiftedW", w=w_profile, q0=0.74)
    s = shifted.meta["shift"]
    assert s > 0 and abs(w_profile.scalar(s) - 0.74) <= 1e-10
    assert shifted(0.0) == 0.74
    with pytest.raises(OutOfRange):
        build_initial_data("shiftedW", w=w_profile, q0=0.8)
    with pytest.raises(ValidationError):
        build_initial_data("linear", w=w_profile, q0=0.5)


# -- backward solve ---------------------------------------------------------

@pytest.fixture(scope="module")
def q_1a(lw, down, w_profile):
    init = build_initial_data("shiftedW", w=w_profile, q0=0.6)
    return solve_q_backward(init, lw, down, ELL, -40 * ELL, fbar=FBAR, case_label="1A")


def test_case_1a_profile(q_1a, roots):
    assert q_1a.q_at_zero == pytest.approx(0.6, abs=1e-15)
    assert np.all(np.diff(q_1a.values) >= -1e-10)
    # the value at -20 ell is already close; the windowed mean needs the longer span
    assert q_1a(-20 * ELL) == pytest.approx(roots[2.0][0], abs=1e-3)
    assert asymptote(q_1a, "left")[0] == pytest.approx(roots[2.0][0], abs=1e-3)


def test_case_1b_profile(lw, down, roots):
    init = build_initial_data("constant", rho_plus=0.25, ell=ELL)
    q = solve_q_backward(init, lw, down, ELL, -40 * ELL, fbar=FBAR)
    assert np.all(np.diff(q.values) >= -1e-10)
    assert asymptote(q, "left")[0] == pytest.approx(roots[2.0][0], abs=1e-3)


def test_case_2a_constant_data_blows_up(lw, up, roots):
    init = build_initial_data("constant", rho_plus=roots[2.0][1], ell=ELL)
    with pytest.raises(BlowUp) as info:
        solve_q_backward(init, lw, up, ELL, -40 * ELL, fbar=FBAR)
    assert info.value.x < 0
    assert info.value.partial.x_min > -1.0


def test_transversality(q_1a, lw, down):
    rep = transversality_report(q_1a, lw, down, ELL)
    assert rep.passed
    assert rep.crossing < 0
    assert rep.crossing + ELL / q_1a.scalar(rep.crossing) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(NotApplicable):
        transversality_report(constant_profile(0.5), lw, 1.0, ELL)


def test_method_of_steps_converges(lw, down):
    xs = -np.arange(0, 21) * ELL
    sols = []
    for div in (16, 32, 64):
        h = ELL / div
        init = build_initial_data("constant", rho_plus=0.75, ell=ELL, h=h)
        sols.append(solve_q_backward(init, lw, down, ELL, -20 * ELL, MarchOptions(h=h))(xs))
    e1, e2 = np.abs(sols[0] - sols[1]).max(), np.abs(sols[1] - sols[2]).max()
    assert np.log2(e1 / e2) >= 3


# -- periodic residual ------------------------------------------------------

def test_residual_of_constant_on_uniform_road(lw):
    q = constant_profile(0.75)
    assert periodic_residual(q, lw, 1.0, ELL, FBAR, 0.3) <= 1e-14


def test_residual_of_accepted_profile(q_1a, lw, down):
    assert max_periodic_residual(q_1a, lw, down, ELL, FBAR, n=50) <= 1e-6


def test_residual_detects_perturbation(q_1a, lw, down):
    vals = q_1a.values.copy()
    band = (q_1a.grid > -1.0) & (q_1a.grid < -0.8)
    vals[band] += 0.01
    bumped = Profile(q_1a.grid, vals, ELL)
    assert periodic_residual(bumped, lw, down, ELL, FBAR, -1.1) > 1e-4


def test_travel_time_matches_adaptive_quadrature(q_1a, lw, down):
    a, b = -1.3, 0.4
    f = lambda z: 1.0 / ((2.0 if z < 0 else 1.0) * (1.0 - q_1a.scalar(z)))
    ref = quad(f, a, 0.0, epsabs=1e-13, limit=200)[0] + quad(f, 0.0, b, epsabs=1e-13, limit=200)[0]
    assert travel_time(q_1a, lw, down, a, b) == pytest.approx(ref, abs=1e-10)


# -- generated positions ----------------------------------------------------

def test_generate_positions_constant():
    z = generate_positions(constant_profile(0.5), 0.0, ELL, 0, 3)
    np.testing.assert_allclose(z, [0.0, 0.4, 0.8, 1.2], atol=1e-15)


def test_generate_positions_leaves_span():
    with pytest.raises(RangeExhausted):
        generate_positions(constant_profile(0.5), 0.0, ELL, 0, 20)


def test_generated_densities_follow_profile(q_1a):
    z = generate_positions(q_1a, -0.5, ELL, 3, 8)
    ens = CarEnsemble(z, ELL, float(q_1a(z[-1])))
    np.testing.assert_allclose(ens.densities[:-1], q_1a(z[:-1]), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(z0=st.floats(-1.0, 0.5), frac=st.floats(0.01, 0.99))
def test_interleaving(q_1a, z0, frac):
    z = generate_positions(q_1a, z0, ELL, 2, 3)
    y = z[1] + frac * (z[2] - z[1])
    ys = leader_position(y, q_1a.scalar(y), ELL)
    assert z[2] < ys < z[3]


# -- asymptotes and invariant checks -----------------------------------------

def test_asymptote_of_constant():
    mean, band = asymptote(constant_profile(0.3), "left")
    assert mean == pytest.approx(0.3, abs=1e-15) and band <= 1e-15
    with pytest.raises(SpanTooShort):
        asymptote(constant_profile(0.3, lo=-0.5), "left")
    with pytest.raises(ValidationError):
        asymptote(constant_profile(0.3), "up")


def test_invariant_region(family_1a, lw, roots):
    rho_minus = roots[2.0][0]
    for m in family_1a.members:
        x, q = m.grid, m.values
        sel = (x < 0) & (x + ELL / q <= 0)
        assert np.all(2.0 * q[sel] * (1 - q[sel]) - FBAR > -1e-10)
        assert np.all(q[sel] - rho_minus > -1e-10)


def test_no_interior_maximum_on_first_backward_interval(family_1a):
    for m in family_1a.members:
        z_prev = generate_positions(m, 0.0, ELL, 1, 0)[0]
        sel = (m.grid >= z_prev) & (m.grid <= 0)
        d = np.diff(m.values[sel])
        d = d[np.abs(d) > 1e-14]
        assert not np.any((d[:-1] > 0) & (d[1:] < 0))


# -- families and Psi -------------------------------------------------------

def test_family_1a_is_ordered(family_1a):
    assert family_1a.non_crossing and family_1a.min_gap > 0
    assert np.all(np.diff(family_1a.q0s) > 0)
    assert all(d["monotone"] for d in family_1a.diagnostics)
    assert all(d["residual"] <= 1e-6 for d in family_1a.diagnostics)


def test_single_member_family(lw, down, w_profile):
    fam = build_family(lw, down, ELL, FBAR, [0.5], -4 * ELL, rho_plus=0.75, w=w_profile)
    assert isinstance(fam, ProfileFamily) and fam.non_crossing


def test_family_collects_failures(lw, up, roots):
    fam = build_family(lw, up, ELL, FBAR, [0.3, roots[2.0][1]], -40 * ELL, rho_plus=roots[2.0][1])
    assert len(fam.members) == 1 and len(fam.failures) == 1
    assert isinstance(fam.failures[0][1], BlowUp)


def test_psi_round_trip_and_outside(family_1a):
    m = family_1a.members[3]
    q0 = family_1a.q0s[3]
    for x in (-1.0, -0.2, 0.0, 0.5):
        assert psi(family_1a, x, float(m(x))) == pytest.approx(q0, abs=1e-9)
    with pytest.raises(OutsideD):
        psi(family_1a, -0.5, float(family_1a.upper()(-0.5)) + 0.01)
    with pytest.raises(OutsideD):
        psi(family_1a, -0.5, float(family_1a.lower()(-0.5)))


@settings(max_examples=50, deadline=None)
@given(k=st.integers(1, 7), x=st.floats(-1.5, 1.0))
def test_psi_labels_every_member(family_1a, k, x):
    y = float(family_1a.members[k](x))
    assert psi(family_1a, x, y) == pytest.approx(family_1a.q0s[k], abs=1e-9)


# -- serialisation ----------------------------------------------------------

def test_profile_csv_round_trip(q_1a, tmp_path):
    path = tmp_path / "q.csv"
    q_1a.to_csv(path)
    text = path.read_bytes()
    assert text.startswith(b"x,Q\n") and b"\r" not in text
    back = Profile.from_csv(path, ELL)
    np.testing.assert_array_equal(back.grid, q_1a.grid)
    np.testing.assert_array_equal(back.values, q_1a.values)


def test_family_to_dir(family_1a, tmp_path):
    family_1a.to_dir(tmp_path / "fam")
    index = (tmp_path / "fam" / "index.csv").read_text().splitlines()
    assert index[0] == "q0,filename" and len(index) == 9
    first = index[1].split(",")[1]
    assert (tmp_path / "fam" / first).exists()


def test_profile_validation():
    with pytest.raises(DomainError):
        Profile(np.array([0.0, 1.0]), np.array([0.5, 1.0]), ELL)
    with pytest.raises(ValidationError):
        Profile(np.array([1.0, 0.0]), np.array([0.5, 0.5]), ELL)
