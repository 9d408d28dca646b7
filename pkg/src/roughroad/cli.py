"""``roughroad`` command-line front end.

Exit codes: 0 success, 2 invalid input, 3 certified negative outcome
(blow-up, no profile).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from . import ftl, model as _m, profile as _p, viscous as _v
from .exceptions import CertifiedOutcome, NoProfile, RoughRoadError, ValidationError

log = logging.getLogger("roughroad")

EXIT_OK, EXIT_INVALID, EXIT_CERTIFIED = 0, 2, 3

_CASE_SIDES = {"A": "low-high", "B": "low-low", "C": "high-high", "D": "high-low"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _pair(text):
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return vals


def _common(p, densities=True):
    p.add_argument("--flux", default="lw", help="velocity law: lw or quadratic")
    p.add_argument("--v-minus", type=float, default=None, help="speed limit on x < 0")
    p.add_argument("--v-plus", type=float, default=None, help="speed limit on x >= 0")
    p.add_argument("--ell", type=float, default=0.2, help="car length")
    p.add_argument("-o", "--output", default=None, help="output file or directory")
    p.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script next to the data")
    if densities:
        p.add_argument("--fbar", type=float, default=None, help="flux level")
        p.add_argument("--side", default=None, help="root choice like low-high (with --fbar)")
        p.add_argument("--rho-minus", type=float, default=None)
        p.add_argument("--rho-plus", type=float, default=None)
        p.add_argument("--case", default=None, help="canonical data for a case label such as 1A")
        p.add_argument("--rh-tol", type=float, default=1e-10,
                       help="relative tolerance of the flux balance check")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roughroad", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None, help="key = value file; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("classify", help="case label and existence verdict")
    _common(p)

    p = sub.add_parser("profile-w", help="travelling wave on a uniform road")
    _common(p)
    p.add_argument("--speed", type=float, default=None, help="uniform speed limit (default v-plus)")
    p.add_argument("--h", type=float, default=None)

    p = sub.add_parser("profile-q", help="stationary profile across the jump")
    _common(p)
    p.add_argument("--q0", type=float, default=None, help="Q(0); default rho_plus")
    p.add_argument("--x-min", type=float, default=None, help="left end (default -40 ell)")
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--probe", action="store_true", help="allow q0 beyond the admissible range")

    p = sub.add_parser("family", help="one profile per Q(0) value")
    _common(p)
    p.add_argument("--q0-grid", type=_floats, default=None)
    p.add_argument("--n-members", type=int, default=8)
    p.add_argument("--x-min", type=float, default=None)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("ftl", help="Follow-the-Leader simulation from Riemann data")
    _common(p, densities=False)
    p.add_argument("--riemann", type=_pair, required=False, default=None, help="rhoL,rhoR")
    p.add_argument("--x0", type=float, default=0.0, help="shift of the rear lattice")
    p.add_argument("--x0-spacings", type=float, default=None,
                   help="shift of the rear lattice in units of ell/rhoL")
    p.add_argument("--n-left", type=int, default=600)
    p.add_argument("--n-right", type=int, default=600)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--record-every", type=int, default=100)
    p.add_argument("--no-events", action="store_true", help="naive fixed steps across x = 0")

    p = sub.add_parser("viscous-profile", help="stationary viscous profile")
    _common(p)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--anchor", type=float, default=None, help="rho(0); default: existence witness")
    p.add_argument("--xspan", type=float, default=None)

    p = sub.add_parser("viscous-pde", help="viscous conservation law from Riemann data")
    _common(p, densities=False)
    p.add_argument("--riemann", type=_pair, default=None, help="rhoL,rhoR")
    p.add_argument("--epsilon", type=float, default=0.02)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--dx", type=float, default=0.002)
    p.add_argument("--x-lo", type=float, default=-3.0)
    p.add_argument("--x-hi", type=float, default=3.0)
    p.add_argument("--record-times", type=_floats, default=None)

    p = sub.add_parser("diagnostics", help="identity checks on one profile")
    _common(p)
    p.add_argument("--q0", type=float, default=None)
    p.add_argument("--x-min", type=float, default=None)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--scan", action="store_true", help="run the anchor scan for the case")
    return parser


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def read_config(path) -> Dict[str, str]:
    cfg = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg[key.replace("-", "_")] = value
    return cfg


def _config_argv(cfg, subparser) -> List[str]:
    """Turn config entries into flags placed before the command-line flags."""
    known = {a.dest: a for a in subparser._actions if a.option_strings}
    argv = []
    for key, value in cfg.items():
        if key == "command":
            continue
        action = known.get(key)
        if action is None:
            raise ValidationError(f"unknown config key {key!r}")
        flag = max(action.option_strings, key=len)
        if action.nargs == 0:
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(flag)
        else:
            argv += [flag, value]
    return argv


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, rest = pre.parse_known_args(argv)
    if known.config:
        cfg = read_config(known.config)
        commands = parser._subparsers._group_actions[0].choices
        cmd_pos = next((i for i, a in enumerate(rest) if a in commands), None)
        if cmd_pos is None:
            if "command" not in cfg:
                raise ValidationError("no subcommand given on the command line or in the config")
            rest = [cfg["command"]] + rest
            cmd_pos = 0
        sub = commands[rest[cmd_pos]]
        rest = rest[:cmd_pos + 1] + _config_argv(cfg, sub) + rest[cmd_pos + 1:]
    args = parser.parse_args(rest)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise ValidationError("a subcommand is required")
    return args


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _road(args, label=None):
    vm, vp = args.v_minus, args.v_plus
    if vm is None or vp is None:
        if label is None:
            raise ValidationError("--v-minus and --v-plus are required")
        dm, dp = (2.0, 1.0) if label.startswith("1") else (1.0, 2.0)
        vm = dm if vm is None else vm
        vp = dp if vp is None else vp
    road = _m.RoadCondition(vm, vp)
    if label is not None and road.downward != label.startswith("1"):
        raise ValidationError(f"case {label} needs {'V- > V+' if label.startswith('1') else 'V- < V+'}")
    return road


def _resolve(args):
    """Model, road and the pair (rho_minus, rho_plus) from the flag combinations."""
    model = _m.FluxModel.by_name(args.flux)
    label = args.case.upper() if args.case else None
    if label is not None and (len(label) != 2 or label[0] not in "12" or label[1] not in _CASE_SIDES):
        raise ValidationError(f"unknown case label {args.case!r}")
    road = _road(args, label)
    if args.rho_minus is not None and args.rho_plus is not None:
        if args.fbar is not None or args.side is not None:
            raise ValidationError("give either densities or --fbar/--side, not both")
        return model, road, args.rho_minus, args.rho_plus
    fbar = args.fbar if args.fbar is not None else (3 / 16 if label else None)
    side = args.side or (_CASE_SIDES[label[1]] if label else None)
    if fbar is None or side is None:
        raise ValidationError("need --rho-minus/--rho-plus, --fbar with --side, or --case")
    rm, rp = _m.densities_for_side(model, road, fbar, side)
    return model, road, rm, rp


def _out(args, default):
    return args.output if args.output else default


def _gnuplot(path, columns, title):
    with open(path + ".gp", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("set datafile separator ','\n")
        fh.write(f"set title '{title}'\n")
        fh.write(f"plot '{os.path.basename(path)}' every ::1 using {columns} with lines title '{title}'\n")


def _opts(args):
    return _p.MarchOptions(h=getattr(args, "h", None))


def _print_lines(lines):
    for line in lines:
        print(line)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_classify(args):
    model, road, rm, rp = _resolve(args)
    rep = _m.classify_case(model, road, rm, rp, rtol=args.rh_tol)
    print(f"Case {rep.label}: {rep.verdict.value}")
    if rep.q0_range is not None:
        print(f"Admissible Q(0) range: {rep.q0_range}")
    print(f"Flux level {rep.fbar:.6g}, critical density {rep.rho_star:.6g}")
    _print_lines(rep.as_lines())
    return EXIT_OK


def cmd_profile_w(args):
    model = _m.FluxModel.by_name(args.flux)
    V = args.speed if args.speed is not None else args.v_plus
    if V is None:
        raise ValidationError("--speed (or --v-plus) is required")
    fbar = args.fbar
    if fbar is None:
        raise ValidationError("--fbar is required")
    w = _p.solve_w_profile(model, V, fbar, args.ell, _opts(args))
    path = _out(args, "w_profile.csv")
    w.to_csv(path)
    if args.gnuplot:
        _gnuplot(path, "1:2", "W")
    print(f"rho_low={w.meta['rho_low']:.17g}")
    print(f"rho_high={w.meta['rho_high']:.17g}")
    print(f"wrote={path}")
    return EXIT_OK


def _certify_none(model, road, rm, rp, args, rep):
    scan = _p.scan_case(model, road, args.ell, rm, rp, x_min=args.x_min, opts=_opts(args))
    for a in scan.attempts:
        print(f"anchor q0={a.q0:.6g} init={a.init_kind} outcome={a.outcome}")
    raise NoProfile(f"no profile exists for case {rep.label}: every candidate datum on x >= 0 "
                    f"fails ({len(scan.attempts)} anchors)")


def _solve_member(model, road, rm, rp, args, rep, q0):
    opts = _opts(args)
    h = opts.step(args.ell)
    x_min = args.x_min if args.x_min is not None else -40 * args.ell
    if abs(q0 - rp) <= 1e-12:
        init = _p.build_initial_data("constant", rho_plus=rp, ell=args.ell, h=h)
    else:
        if rep.q0_range is not None and q0 not in rep.q0_range and not getattr(args, "probe", False):
            raise ValidationError(f"q0={q0} outside the admissible range {rep.q0_range}; use --probe")
        w = _p.solve_w_profile(model, road.v_plus, rep.fbar, args.ell, opts)
        init = _p.build_initial_data("shiftedW", w=w, q0=q0, h=h)
    return _p.solve_q_backward(init, model, road, args.ell, x_min, opts,
                               fbar=rep.fbar, case_label=rep.label)


def cmd_profile_q(args):
    model, road, rm, rp = _resolve(args)
    rep = _m.classify_case(model, road, rm, rp, rtol=args.rh_tol)
    if rep.verdict is _m.Verdict.NONE:
        _certify_none(model, road, rm, rp, args, rep)
    q0 = args.q0 if args.q0 is not None else rp
    prof = _solve_member(model, road, rm, rp, args, rep, q0)
    path = _out(args, "profile_q.csv")
    prof.to_csv(path)
    if args.gnuplot:
        _gnuplot(path, "1:2", f"Q case {rep.label}")
    left, band = _p.asymptote(prof, "left", min_span=0.0)
    print(f"label={rep.label}")
    print(f"q0={q0:.17g}")
    print(f"asymptote_left={left:.17g}")
    print(f"asymptote_left_band={band:.17g}")
    print(f"wrote={path}")
    return EXIT_OK


def cmd_family(args):
    model, road, rm, rp = _resolve(args)
    rep = _m.classify_case(model, road, rm, rp, rtol=args.rh_tol)
    if rep.verdict is _m.Verdict.NONE:
        _certify_none(model, road, rm, rp, args, rep)
    grid = args.q0_grid
    if grid is None:
        if rep.verdict is _m.Verdict.UNIQUE:
            grid = [rp]
        else:
            lo = rep.q0_range.lo + (0 if rep.q0_range.lo_closed else 1e-4)
            grid = np.linspace(lo, rep.q0_range.hi, args.n_members).tolist()
    x_min = args.x_min if args.x_min is not None else -40 * args.ell
    fam = _p.build_family(model, road, args.ell, rep.fbar, grid, x_min, rho_plus=rp, rho_minus=rm,
                          opts=_opts(args), case_label=rep.label, jobs=args.jobs)
    out = _out(args, "family")
    fam.to_dir(out)
    if args.gnuplot:
        with open(os.path.join(out, "family.gp"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("set datafile separator ','\nplot \\\n")
            names = [f"member_{k:03d}.csv" for k in range(len(fam.members))]
            fh.write(", \\\n".join(f"  '{n}' every ::1 using 1:2 with lines notitle" for n in names) + "\n")
    print(f"label={rep.label}")
    print(f"members={len(fam.members)}")
    print(f"failures={len(fam.failures)}")
    for q, exc in fam.failures:
        print(f"failure q0={q:.6g} reason={exc}")
    print(f"min_gap={fam.min_gap:.6g}")
    print(f"non_crossing={str(fam.non_crossing).lower()}")
    print(f"wrote={out}")
    return EXIT_OK


def cmd_ftl(args):
    if args.riemann is None:
        raise ValidationError("--riemann rhoL,rhoR is required")
    model = _m.FluxModel.by_name(args.flux)
    road = _road(args)
    rl, rr = args.riemann
    x0 = args.x0 if args.x0_spacings is None else args.x0_spacings * args.ell / rl
    ens = ftl.riemann_initial(rl, rr, args.ell, x0, args.n_left, args.n_right)
    dt = args.dt
    if dt is None:
        vmax = max(road.v_minus, road.v_plus)
        dt = min(0.1 * args.ell / vmax, 1e-4)
    traj = ftl.simulate(ens, model, road, args.T, dt,
                        ftl.SimOptions(event_resolved=not args.no_events, record_every=args.record_every))
    path = _out(args, "trajectory.csv")
    traj.to_csv(path)
    traj.events_to_csv(path + ".events.csv")
    if args.gnuplot:
        _gnuplot(path, "3:4", "FtL")
    print(f"records={len(traj.times)}")
    print(f"events={len(traj.events)}")
    print(f"wrote={path}")
    return EXIT_OK


def cmd_viscous_profile(args):
    model, road, rm, rp = _resolve(args)
    ex = _v.viscous_existence(model, road, rm, rp)
    anchor = args.anchor
    if anchor is None:
        if not ex.exists:
            raise NoProfile("no monotone viscous profile connects the two states")
        anchor = ex.rho_hat
    fbar = _m.check_rankine_hugoniot(model, road, rm, rp, rtol=args.rh_tol).fbar
    prof = _v.stationary_profile(model, road, args.epsilon, fbar, anchor, args.xspan)
    path = _out(args, "viscous_profile.csv")
    prof.to_csv(path)
    if args.gnuplot:
        _gnuplot(path, "1:2", "viscous profile")
    print(f"exists={str(ex.exists).lower()}")
    print(f"anchor={anchor:.17g}")
    print(f"wrote={path}")
    return EXIT_OK


def cmd_viscous_pde(args):
    if args.riemann is None:
        raise ValidationError("--riemann rhoL,rhoR is required")
    model = _m.FluxModel.by_name(args.flux)
    road = _road(args)
    rl, rr = args.riemann
    state = _v.riemann_state(rl, rr, args.epsilon, args.x_lo, args.x_hi, args.dx)
    states = _v.pde_solve(state, model, road, args.T, _v.PdeOptions(record_times=args.record_times or ()))
    path = _out(args, "viscous_pde.csv")
    _v.write_pde_csv(path, [state] + states)
    if args.gnuplot:
        _gnuplot(path, "2:3", "viscous PDE")
    print(f"records={len(states) + 1}")
    print(f"wrote={path}")
    return EXIT_OK


def cmd_diagnostics(args):
    model, road, rm, rp = _resolve(args)
    rep = _m.classify_case(model, road, rm, rp, rtol=args.rh_tol)
    _print_lines(rep.as_lines())
    if args.scan or rep.verdict is _m.Verdict.NONE:
        scan = _p.scan_case(model, road, args.ell, rm, rp, x_min=args.x_min, opts=_opts(args))
        for a in scan.attempts:
            print(f"anchor q0={a.q0:.6g} init={a.init_kind} outcome={a.outcome} "
                  f"left={a.left_asymptote:.6g} residual={a.residual:.3g}")
        print(f"accepted={len(scan.accepted)}")
        if rep.verdict is _m.Verdict.NONE:
            return EXIT_CERTIFIED if not scan.accepted else EXIT_OK
    q0 = args.q0 if args.q0 is not None else rp
    prof = _solve_member(model, road, rm, rp, args, rep, q0)
    res = _p.max_periodic_residual(prof, model, road, args.ell, rep.fbar)
    left, band = _p.asymptote(prof, "left", min_span=0.0)
    print(f"periodic_residual_max={res:.3e}")
    print(f"asymptote_left={left:.17g}")
    print(f"asymptote_left_band={band:.3e}")
    print(f"monotone={str(bool(np.all(np.diff(prof.values) >= -1e-10))).lower()}")
    try:
        tr = _p.transversality_report(prof, model, road, args.ell)
        print(f"c1_crossing={tr.crossing:.17g}")
        print(f"slope_c0_left={tr.slope_c0_left:.6g}")
        print(f"slope_c0_right={tr.slope_c0_right:.6g}")
        print(f"slope_c1_left={tr.slope_c1_left:.6g}")
        print(f"slope_c1_right={tr.slope_c1_right:.6g}")
        print(f"h_prime={tr.h_prime:.6g}")
        print(f"transversality={'pass' if tr.passed else 'fail'}")
    except RoughRoadError as exc:
        print(f"transversality=not_applicable ({exc})")
    return EXIT_OK


COMMANDS = {
    "classify": cmd_classify,
    "profile-w": cmd_profile_w,
    "profile-q": cmd_profile_q,
    "family": cmd_family,
    "ftl": cmd_ftl,
    "viscous-profile": cmd_viscous_profile,
    "viscous-pde": cmd_viscous_pde,
    "diagnostics": cmd_diagnostics,
}


def run(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except CertifiedOutcome as exc:
        print(f"roughroad: {exc}", file=sys.stderr)
        return EXIT_CERTIFIED
    except (RoughRoadError, ValueError, OSError) as exc:
        print(f"roughroad: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
