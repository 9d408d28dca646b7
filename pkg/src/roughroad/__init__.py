"""Numerical lab for Follow-the-Leader traffic crossing a jump in the speed limit."""
from .exceptions import *  # noqa: F401,F403
from .model import (
    FluxModel,
    RoadCondition,
    Verdict,
    Interval,
    CaseReport,
    flux,
    flux_derivative,
    critical_density,
    fbar_roots,
    check_rankine_hugoniot,
    classify_case,
    speed_limit,
)
from .profile import (
    Profile,
    ProfileFamily,
    MarchOptions,
    leader_position,
    solve_w_profile,
    build_initial_data,
    solve_q_backward,
    transversality_report,
    periodic_residual,
    generate_positions,
    asymptote,
    build_family,
    psi,
    scan_case,
)

__version__ = "0.1.0"
