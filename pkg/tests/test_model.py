import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from roughroad import (
    DomainError,
    FluxModel,
    NoRoot,
    RHViolation,
    RoadCondition,
    ValidationError,
    Verdict,
    check_rankine_hugoniot,
    classify_case,
    critical_density,
    fbar_roots,
    flux,
    flux_derivative,
    speed_limit,
)
from roughroad.model import densities_for_side

LW = FluxModel.lighthill_whitham()
QUAD = FluxModel.quadratic()


@pytest.mark.parametrize("V, rho, expected", [(1, 0.5, 0.25), (2, 0.6, 0.48), (7, 1.0, 0.0)])
def test_flux_values(V, rho, expected):
    assert flux(LW, V, rho) == pytest.approx(expected, abs=1e-15)


def test_flux_rejects_density_outside_unit_interval():
    with pytest.raises(DomainError):
        flux(LW, 1.0, 1.2)
    with pytest.raises(DomainError):
        flux(LW, 1.0, -0.1)


def test_flux_derivative_matches_finite_difference():
    rho = np.linspace(0.05, 0.95, 19)
    fd = (flux(LW, 2.0, rho + 1e-6) - flux(LW, 2.0, rho - 1e-6)) / 2e-6
    np.testing.assert_allclose(flux_derivative(LW, 2.0, rho), fd, atol=1e-8)


@pytest.mark.parametrize("model, V, expected", [(LW, 1, 0.5), (LW, 2, 0.5), (QUAD, 1, 1 / math.sqrt(3))])
def test_critical_density(model, V, expected):
    assert critical_density(model, V) == pytest.approx(expected, abs=1e-10)


def test_fbar_roots_examples():
    assert fbar_roots(LW, 1.0, 3 / 16) == pytest.approx((0.25, 0.75), abs=1e-12)
    lo, hi = fbar_roots(LW, 2.0, 3 / 16)
    assert lo == pytest.approx((1 - math.sqrt(1 - 0.375)) / 2, abs=1e-12)
    assert hi == pytest.approx((1 + math.sqrt(1 - 0.375)) / 2, abs=1e-12)
    assert fbar_roots(LW, 1.0, 0.25) == (0.5, 0.5)


def test_fbar_above_maximum_is_rejected():
    with pytest.raises(NoRoot):
        fbar_roots(LW, 1.0, 0.3)


def test_rankine_hugoniot():
    rm, _ = fbar_roots(LW, 2.0, 3 / 16)
    assert check_rankine_hugoniot(LW, RoadCondition(2, 1), rm, 0.75).fbar == pytest.approx(0.1875, abs=1e-12)
    trivial = check_rankine_hugoniot(LW, RoadCondition(2, 1), 0.0, 0.0)
    assert trivial.trivial and trivial.fbar == 0.0
    with pytest.raises(RHViolation):
        check_rankine_hugoniot(LW, RoadCondition(2, 1), 0.6, 0.7)


def test_six_digit_example_densities_need_a_looser_tolerance():
    road = RoadCondition(2, 1)
    with pytest.raises(RHViolation):
        classify_case(LW, road, 0.104715, 0.75)
    rep = classify_case(LW, road, 0.104715, 0.75, rtol=1e-5)
    assert (rep.label, rep.verdict) == ("1A", Verdict.INFINITELY_MANY)


def test_classify_examples():
    down, up = RoadCondition(2, 1), RoadCondition(1, 2)
    rep = classify_case(LW, down, fbar_roots(LW, 2.0, 3 / 16)[0], 0.75)
    assert rep.label == "1A" and rep.verdict is Verdict.INFINITELY_MANY
    assert rep.q0_range.lo == pytest.approx(0.25) and rep.q0_range.hi == pytest.approx(0.75)
    assert not rep.q0_range.lo_closed and rep.q0_range.hi_closed
    rho_m = (1 + math.sqrt(1 - 0.42)) / 2
    rep = classify_case(LW, down, rho_m, 0.7)
    assert rep.label == "1C" and rep.verdict is Verdict.NONE and rep.q0_range is None
    rep = classify_case(LW, up, 0.25, fbar_roots(LW, 2.0, 3 / 16)[1])
    assert rep.label == "2A" and rep.verdict is Verdict.INFINITELY_MANY
    assert rep.q0_range.lo_closed and rep.q0_range.hi_closed
    assert rep.q0_range.hi == pytest.approx(0.75)


def test_trivial_flux_level_is_not_classified():
    with pytest.raises(ValidationError):
        classify_case(LW, RoadCondition(2, 1), 0.0, 0.0)


def test_degenerate_level_is_flagged():
    road = RoadCondition(2, 1)
    rm, _ = fbar_roots(LW, 2.0, 0.25)
    rep = classify_case(LW, road, rm, 0.5)
    assert rep.degenerate and rep.label == "1A"
    assert rep.q0_range.lo == rep.q0_range.hi == pytest.approx(0.5)


def test_speed_limit_is_right_continuous():
    road = RoadCondition(2, 1)
    assert speed_limit(road, -0.001) == 2
    assert speed_limit(road, 0.0) == 1
    assert speed_limit(road, 5.0) == 1


def test_road_condition_validation():
    with pytest.raises(ValidationError):
        RoadCondition(1.0, 1.0)
    with pytest.raises(ValidationError):
        RoadCondition(-1.0, 1.0)


def test_custom_model_validation():
    with pytest.raises(ValidationError):
        FluxModel(phi=lambda r: 0.5 - np.asarray(r) / 2)
    with pytest.raises(ValidationError):
        FluxModel(phi=lambda r: 1.0 - np.asarray(r), c_hat0=2.0)
    m = FluxModel(phi=lambda r: 1.0 - np.asarray(r, dtype=float))
    assert m.c_hat0 == pytest.approx(1.0, abs=1e-6)
    assert m.dphi(0.3) == pytest.approx(-1.0, abs=1e-6)


def test_by_name():
    assert FluxModel.by_name("lw").name == "lw"
    with pytest.raises(ValidationError):
        FluxModel.by_name("nope")


def test_densities_for_side():
    road = RoadCondition(2, 1)
    rm, rp = densities_for_side(LW, road, 3 / 16, "low-high")
    assert rp == pytest.approx(0.75) and rm == pytest.approx(fbar_roots(LW, 2.0, 3 / 16)[0])
    with pytest.raises(ValidationError):
        densities_for_side(LW, road, 3 / 16, "middle")


# -- properties -------------------------------------------------------------

speeds = st.floats(0.2, 5.0)


@given(model=st.sampled_from([LW, QUAD]), V=speeds)
def test_flux_vanishes_at_ends_and_peaks_at_critical_density(model, V):
    assert flux(model, V, 0.0) == 0.0
    assert abs(flux(model, V, 1.0)) <= 1e-15
    rs = critical_density(model, V)
    grid = np.linspace(0, 1, 2001)
    assert flux(model, V, rs) >= flux(model, V, grid).max() - 1e-10


@given(model=st.sampled_from([LW, QUAD]), V=speeds, frac=st.floats(0.01, 0.99))
def test_roots_round_trip(model, V, frac):
    fmax = flux(model, V, critical_density(model, V))
    fbar = frac * fmax
    lo, hi = fbar_roots(model, V, fbar)
    assert lo <= critical_density(model, V) <= hi
    assert abs(flux(model, V, lo) - fbar) <= 1e-12
    assert abs(flux(model, V, hi) - fbar) <= 1e-12


def _triple(data):
    v1 = data.draw(speeds)
    v2 = data.draw(speeds)
    assume(abs(v1 - v2) > 1e-3)
    frac = data.draw(st.floats(0.05, 0.95))
    fbar = frac * min(v1, v2) * 0.25
    return v1, v2, fbar


@settings(max_examples=100)
@given(data=st.data())
def test_ordering_chain(data):
    vm, vp, fbar = _triple(data)
    road = RoadCondition(vm, vp)
    r1m, r2m = fbar_roots(LW, vm, fbar)
    r1p, r2p = fbar_roots(LW, vp, fbar)
    rep = classify_case(LW, road, r1m, r2p)
    if vm > vp:
        assert rep.rho1_minus < rep.rho1_plus <= rep.rho_star <= rep.rho2_plus < rep.rho2_minus
    else:
        assert 0 < rep.rho1_plus < rep.rho1_minus <= rep.rho_star <= rep.rho2_minus < rep.rho2_plus
    assert list(rep.roots) == sorted(rep.roots)


@settings(max_examples=50)
@given(data=st.data(), alpha=st.floats(0.1, 10.0), sides=st.sampled_from(["low-high", "low-low", "high-high", "high-low"]))
def test_verdict_invariant_under_rescaling(data, alpha, sides):
    vm, vp, fbar = _triple(data)
    rep = classify_case(LW, RoadCondition(vm, vp), *densities_for_side(LW, RoadCondition(vm, vp), fbar, sides))
    road2 = RoadCondition(alpha * vm, alpha * vp)
    rep2 = classify_case(LW, road2, *densities_for_side(LW, road2, alpha * fbar, sides))
    assert (rep.label, rep.verdict) == (rep2.label, rep2.verdict)
