"""``geocaustic`` command-line interface.

Exit codes: 0 success, 1 a verification or stability threshold failed,
2 malformed input (reported with line and column), 3 numerical failure
(reported with the failing curve parameter), 4 the surface is not strictly
convex and closed.
"""

from __future__ import annotations

import argparse
import os
import sys

from .caustic import (SPACING_FRACTION, assemble_envelope, inflection_correspondence,
                      naif_envelope, verify_theorem1)
from .config import ENV_VAR, build_config
from .curve import RegularityError, curve_from_dict
from .expressions import ExpressionError
from .flow import UnitTangent, conjugate_distances, conjugate_point
from .integrator import IntegrationError
from .io import InputError, Outputs, branch_csv, csv_text, decomposition_dict, dumps, \
    input_error, read_json, stability_csv
from .stability import ConvexityError, largest_stable, stability_experiment
from .surface import BUILTINS, ChartPoint, DomainError, surface_from_dict

EXIT_OK = 0
EXIT_THRESHOLD = 1
EXIT_PARSE = 2
EXIT_NUMERICAL = 3
EXIT_CONVEXITY = 4


class NumericalFailure(RuntimeError):
    def __init__(self, message, xi=None):
        self.xi = xi
        where = f" at xi = {xi!r}" if xi is not None else ""
        super().__init__(f"{message}{where}")


# -- inputs -------------------------------------------------------------------------------

def load_surface(path):
    desc, text = read_json(path)
    return _surface(desc, path, text)


def _surface(desc, path, text):
    try:
        return surface_from_dict(desc)
    except (ValueError, KeyError, TypeError) as exc:
        raise input_error(exc, path, text, key=_key_for(exc, "kind")) from None


def _key_for(exc, default):
    msg = str(exc)
    for key in ("metric", "domain", "xi_range", "closed", "params", "surface", "u", "v"):
        if f"'{key}'" in msg:
            return key
    return default


def load_inputs(cfg):
    """Surface and arc-length parameterized curve named by the config."""
    if not cfg.curve:
        raise InputError("no curve given (use --curve FILE)")
    desc, text = read_json(cfg.curve)
    if not isinstance(desc, dict):
        raise InputError("curve description must be a JSON object", cfg.curve)
    if cfg.surface:
        surface = load_surface(cfg.surface)
    else:
        ref = desc.get("surface")
        if ref is None:
            raise InputError("no surface given (use --surface FILE or a 'surface' entry)",
                             cfg.curve)
        if isinstance(ref, dict):
            surface = _surface(ref, cfg.curve, text)
        elif isinstance(ref, str) and ref in BUILTINS:
            surface = _surface({"kind": ref}, cfg.curve, text)
        elif isinstance(ref, str):
            base = os.path.dirname(os.path.abspath(cfg.curve))
            surface = load_surface(os.path.join(base, ref))
        else:
            raise input_error(ValueError("'surface' must be an object, a built-in name or a "
                                         "file name"), cfg.curve, text, "surface")
    try:
        curve = curve_from_dict(desc, surface)
    except RegularityError as exc:
        if exc.xi is None:
            raise NumericalFailure(str(exc)) from None
        raise NumericalFailure("curve speed vanishes", exc.xi) from None
    except (ExpressionError, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, KeyError):
            exc = ValueError(f"curve description needs {exc.args[0]!r}")
        raise input_error(exc, cfg.curve, text, key=_key_for(exc, "kind")) from None
    return surface, curve, text


def _check_failures(dec):
    for p in sorted(dec.branches):
        bad = dec.branches[p].failures.get("tolerance-failure") or []
        if bad:
            raise NumericalFailure(f"integration failed to meet tolerance on branch p = {p}",
                                   bad[0])


def _decomposition(cfg, curve):
    try:
        dec = assemble_envelope(curve, cfg.p_range, T_max=cfg.t_max, grid_n=cfg.grid,
                                jobs=cfg.jobs)
    except IntegrationError as exc:
        raise NumericalFailure(f"geodesic integration failed ({exc})") from None
    _check_failures(dec)
    return dec


# -- commands -----------------------------------------------------------------------------

def cmd_trace(cfg, out=None):
    """Trace the caustic branches and write CSV, JSON and SVG files."""
    _, curve, _ = load_inputs(cfg)
    dec = _decomposition(cfg, curve)
    files = Outputs()
    if "csv" in cfg.formats:
        for p in sorted(dec.branches):
            if p != 0:
                files.add(f"branch_p{p}.csv", branch_csv(dec.branches[p]))
    if "json" in cfg.formats:
        files.add("decomposition.json", dumps(decomposition_dict(dec, cfg.public())))
    if "svg" in cfg.formats:
        from .plotting import render_decomposition
        files.add("envelope.svg", render_decomposition(dec))
    written = files.commit(cfg.out)
    out = out or sys.stdout
    for p in sorted(dec.branches):
        b = dec.branches[p]
        dom = ", ".join(f"[{lo:.6g}, {hi:.6g}]" for lo, hi in b.domain()) or "empty"
        counts = {k: b.count(k) for k in ("cusp", "self-intersection", "inflection")}
        print(f"p = {p:+d}: domain {dom}; cusps {counts['cusp']}, "
              f"self-intersections {counts['self-intersection']}, "
              f"inflections {counts['inflection']}", file=out)
    print(f"inflectional geodesics: {len(dec.inflectional_geodesics)}"
          + ("; truncated at T_max" if dec.truncated else ""), file=out)
    for path in written:
        print(f"wrote {path}", file=out)
    return EXIT_OK


def cmd_verify(cfg, out=None):
    """Compare the decomposition with the naif envelope; exit 1 below threshold."""
    _, curve, _ = load_inputs(cfg)
    dec = _decomposition(cfg, curve)
    try:
        cloud = naif_envelope(curve, cfg.epsilon, cfg.grid, cfg.t_max, jobs=cfg.jobs,
                              inflections=dec.inflections, spacing=SPACING_FRACTION * cfg.tol)
    except IntegrationError as exc:
        raise NumericalFailure(f"geodesic integration failed ({exc})") from None
    rep = verify_theorem1(curve, dec, cfg.epsilon, cfg.tol, jobs=cfg.jobs, cloud=cloud)
    corr = {}
    for p in (1, -1):
        if p in dec.branches:
            corr[str(p)] = inflection_correspondence(curve, dec.branches[p],
                                                     inflections=dec.inflections)
    fractions = [rep.coverage, rep.membership] + list(rep.inflectional_coverage)
    passed = all(f >= cfg.threshold for f in fractions) and not rep.truncated
    report = {"theorem1": rep.to_dict(), "inflection_correspondence": corr,
              "threshold": cfg.threshold, "passed": passed, "config": cfg.public()}
    files = Outputs()
    if "json" in cfg.formats or not cfg.formats:
        files.add("verify.json", dumps(report))
    if "csv" in cfg.formats:
        rows = [("coverage", rep.coverage), ("membership", rep.membership)]
        rows += [(f"inflectional_{k}", f) for k, f in enumerate(rep.inflectional_coverage)]
        files.add("verify.csv", csv_text(("quantity", "fraction"), rows))
    if "svg" in cfg.formats:
        from .plotting import render_decomposition
        files.add("verify.svg", render_decomposition(dec, cloud=cloud.points))
    written = files.commit(cfg.out)
    out = out or sys.stdout
    print(f"coverage {rep.coverage:.6f}, membership {rep.membership:.6f} "
          f"(tol {cfg.tol:g}, epsilon {cfg.epsilon:g}, {rep.n_cloud} crossings)", file=out)
    for k, f in enumerate(rep.inflectional_coverage):
        print(f"inflectional geodesic {k}: covered fraction {f:.6f}", file=out)
    if rep.truncated:
        print("decomposition truncated at T_max", file=out)
    print("PASS" if passed else f"FAIL (threshold {cfg.threshold:g})", file=out)
    for path in written:
        print(f"wrote {path}", file=out)
    return EXIT_OK if passed else EXIT_THRESHOLD


def cmd_stability(cfg, out=None):
    """Perturbation sweep per order; exit 1 if a small enough size is unstable."""
    _, curve, text = load_inputs(cfg)
    if not curve.closed:
        raise input_error(ValueError("the stability sweep needs a closed curve"), cfg.curve,
                          text, "closed")
    orders = cfg.stability_orders
    if cfg.extra.get("p_range_given") and cfg.p_range != "auto":
        orders = [p for p in cfg.p_range if p != 0]
    reports = []
    thresholds = {}
    try:
        for p in orders:
            reps = stability_experiment(curve, p=p, lambda_list=cfg.lambdas, seeds=cfg.seed,
                                        grid_n=cfg.grid, T_max=cfg.t_max, jobs=cfg.jobs)
            reports.extend(reps)
            thresholds[str(p)] = largest_stable(reps)
    except IntegrationError as exc:
        raise NumericalFailure(f"geodesic integration failed ({exc})") from None
    required = [r for r in reports if r.lam <= cfg.stable_below]
    passed = all(r.stable for r in required)
    files = Outputs()
    if "json" in cfg.formats or not cfg.formats:
        files.add("stability.json", dumps({
            "reports": [r.to_dict() for r in reports], "largest_stable_lambda": thresholds,
            "stable_below": cfg.stable_below, "passed": passed, "config": cfg.public()}))
    if "csv" in cfg.formats:
        files.add("stability.csv", stability_csv(reports))
    written = files.commit(cfg.out)
    out = out or sys.stdout
    for r in reports:
        print(f"p = {r.p:+d}  lambda = {r.lam:<8g} hausdorff = {r.hausdorff:.3e}  "
              f"counts {r.pert_counts}  {r.verdict}", file=out)
    for p, lam in thresholds.items():
        print(f"largest stable lambda for p = {p}: {lam}", file=out)
    print("PASS" if passed else f"FAIL (instability at lambda <= {cfg.stable_below:g})",
          file=out)
    for path in written:
        print(f"wrote {path}", file=out)
    return EXIT_OK if passed else EXIT_THRESHOLD


def cmd_surfaces(cfg, out=None):
    out = out or sys.stdout
    for name, text in BUILTINS.items():
        print(f"{name:24s} {text}", file=out)
    return EXIT_OK


def cmd_conjugate(cfg, out=None):
    """Conjugate distances along a single geodesic."""
    if not cfg.surface:
        raise InputError("no surface given (use --surface FILE)")
    surface = load_surface(cfg.surface)
    point, direction = cfg.extra.get("point"), cfg.extra.get("direction")
    if point is None or direction is None:
        raise InputError("conjugate needs --point U,V and --direction DU,DV")
    chart = int(cfg.extra.get("chart") or 0)
    try:
        seed = UnitTangent.from_direction(surface, ChartPoint(chart, *point), direction)
        if cfg.p_range == "auto":
            recs = conjugate_distances(surface, seed, cfg.t_max)
        else:
            recs = [conjugate_point(surface, seed, p, cfg.t_max) for p in cfg.p_range]
            recs = [r for r in recs if r is not None]
    except DomainError as exc:
        raise InputError(str(exc)) from None
    except IntegrationError as exc:
        raise NumericalFailure(f"geodesic integration failed ({exc})") from None
    rows = [(r.order, r.tau, r.point.u, r.point.v, r.point.chart, r.dJ, r.degenerate)
            for r in recs]
    header = ("order", "tau", "u", "v", "chart", "dJ", "degenerate")
    files = Outputs()
    if "csv" in cfg.formats:
        files.add("conjugate.csv", csv_text(header, rows))
    if "json" in cfg.formats:
        files.add("conjugate.json", dumps({"records": [dict(zip(header, r)) for r in rows],
                                           "T_max": cfg.t_max}))
    written = files.commit(cfg.out)
    out = out or sys.stdout
    for r in rows:
        print(f"p = {r[0]:+d}  tau = {r[1]:.12g}  at chart {r[4]} ({r[2]:.9g}, {r[3]:.9g})",
              file=out)
    if not rows:
        print(f"no conjugate points with |tau| <= {cfg.t_max:g}", file=out)
    for path in written:
        print(f"wrote {path}", file=out)
    return EXIT_OK


COMMANDS = {"trace": cmd_trace, "verify": cmd_verify, "stability": cmd_stability,
            "surfaces": cmd_surfaces, "conjugate": cmd_conjugate}


# -- argument parsing -------------------------------------------------------------------

def _pair(text):
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two numbers 'a,b', got {text!r}") from None
    return (a, b)


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list, got {text!r}") \
            from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (default: ${ENV_VAR})")
    common.add_argument("--surface", help="surface JSON file")
    common.add_argument("--curve", help="curve JSON file")
    common.add_argument("--p-range", dest="p_range", help="orders A..B, or 'auto'")
    common.add_argument("--grid", type=int, help="curve grid size (default 512)")
    common.add_argument("--t-max", dest="t_max", type=float,
                        help="geodesic time horizon (default 50)")
    common.add_argument("--epsilon", type=float, help="nearby-geodesic offset (default 1e-4)")
    common.add_argument("--tol", type=float, help="verification tolerance (default 1e-3)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", dest="formats", action="append",
                        choices=["csv", "json", "svg"], help="output format (repeatable)")
    common.add_argument("--jobs", type=int, help="worker processes (default 1)")
    common.add_argument("--seed", type=int, help="random seed (default 0)")

    parser = argparse.ArgumentParser(prog="geocaustic",
                                     description="Tangential caustics and geodesic envelopes "
                                                 "of curves on surfaces.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("trace", parents=[common], help="trace caustic branches")
    v = sub.add_parser("verify", parents=[common],
                       help="check the envelope decomposition against nearby-geodesic "
                            "crossings")
    v.add_argument("--threshold", type=float, help="minimum fraction (default 0.99)")
    s = sub.add_parser("stability", parents=[common], help="perturbation sweep")
    s.add_argument("--lambdas", type=_floats, help="comma separated perturbation sizes")
    s.add_argument("--stable-below", dest="stable_below", type=float,
                   help="sizes up to this must be stable (default 1e-3)")
    sub.add_parser("surfaces", parents=[common], help="list built-in surfaces")
    c = sub.add_parser("conjugate", parents=[common],
                       help="conjugate distances along one geodesic")
    c.add_argument("--point", type=_pair, help="start point U,V")
    c.add_argument("--direction", type=_pair, help="initial direction DU,DV")
    c.add_argument("--chart", type=int, default=0, help="chart of the start point")
    return parser


def _join_negative(argv):
    """Let ``--p-range -2..2`` through argparse by joining it as ``--p-range=-2..2``."""
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--p-range" and i + 1 < len(argv):
            out.append(f"--p-range={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_join_negative(argv))
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    flags["p_range_given"] = args.p_range is not None
    try:
        cfg = build_config(args.command, flags, args.config)
        return COMMANDS[args.command](cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConvexityError as exc:
        print(f"convexity violation: {exc}", file=sys.stderr)
        return EXIT_CONVEXITY


if __name__ == "__main__":
    sys.exit(main())
