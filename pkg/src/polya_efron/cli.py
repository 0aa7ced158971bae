"""polya-efron command line.

Exit codes: 0 all checks passed, 1 violation or refused hypothesis (the report
is still written), 2 configuration or numerical error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from datetime import datetime, timezone

import numpy as np

from . import efron_engine as ee
from .density_core import DensityError, Pmf, check_log_concave, load_spec
from .numerics import QuadratureError, sample_ordered_tuples
from .polya_checks import FunctionTuple, Sampling, andreief_check, check_gm_n, check_pf_n
from . import theorem_suite as ts

DEFAULTS = {"tuples": 1000, "seed": 1, "atol": 1e-8, "rtol": 1e-10, "mass_floor": 1e-12}


class ConfigError(ValueError):
    pass


def parse_grid(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"grid {text!r} is not lo:hi:count")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"grid {text!r} is not lo:hi:count") from exc
    if count < 2 or not hi > lo:
        raise ConfigError(f"grid {text!r} needs hi > lo and count >= 2")
    return np.linspace(lo, hi, count)


def parse_window(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"window {text!r} is not lo:hi") from exc
    if not hi > lo:
        raise ConfigError(f"window {text!r} needs hi > lo")
    return lo, hi


def _load_dist(path):
    try:
        return load_spec(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc


def _load_phi(path) -> ee.PhiSpec:
    try:
        text = path if path.lstrip().startswith("{") else open(path, encoding="utf-8").read()
        return ee.phi_from_json(json.loads(text))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc


def _functions(names: str) -> FunctionTuple:
    funcs, labels, kinks = [], [], []
    for name in names.split(","):
        name = name.strip()
        try:
            fn, k = ee.univariate(name)
        except (KeyError, ValueError) as exc:
            valid = ", ".join(list(ee.UNIVARIATE) + ["monomial:k"])
            raise ConfigError(f"unknown function {name!r}; valid: {valid}") from exc
        funcs.append(fn)
        labels.append(name)
        kinks.append(tuple(k))
    return FunctionTuple(tuple(funcs), tuple(labels), tuple(kinks))


def _tols(args) -> ts.Tolerances:
    return ts.Tolerances(atol=args.atol, rtol=args.rtol, mass_floor=args.mass_floor)


def _s_grid(args, f):
    grid = parse_grid(args.grid)
    if isinstance(f, Pmf):
        ints = np.round(grid)
        if np.any(np.abs(ints - grid) > 0) or np.any(np.diff(ints) <= 0):
            raise ConfigError("discrete laws need an integer grid, e.g. 0:40:41")
        return ints.astype(int).tolist()
    return grid


def _pair(args):
    f, g = _load_dist(args.fx), _load_dist(args.fy)
    if isinstance(f, Pmf) != isinstance(g, Pmf):
        raise ConfigError("--fx and --fy must both be continuous or both discrete")
    return f, g


def _curve_json(curve) -> list:
    return [c.to_json() for c in curve]


# ---------------------------------------------------------------------------
# commands: each returns (passed, result dict)
# ---------------------------------------------------------------------------

def cmd_check_pf(args):
    d = _load_dist(args.density)
    if isinstance(d, Pmf):
        raise ConfigError("check-pf needs a continuous density")
    domain = parse_window(args.domain) if args.domain else None
    rep = check_pf_n(d, args.n, Sampling(args.tuples, args.seed, domain, args.min_gap))
    return rep.passed, rep.to_json()


def cmd_check_logconcave(args):
    rep = check_log_concave(_load_dist(args.density))
    return rep.passed, rep.to_json()


def cmd_check_gm(args):
    funcs = _functions(args.functions)
    xt = sample_ordered_tuples(len(funcs), parse_window(args.domain), args.tuples, args.seed,
                               args.min_gap)
    rep = check_gm_n(funcs, xt, seed=args.seed)
    return rep.passed, rep.to_json()


def cmd_efron(args):
    f, g = _pair(args)
    rep = ts.verify_strong_efron(_load_phi(args.phi), f, g, _s_grid(args, f), _tols(args),
                                 args.override, args.seed)
    return rep.passed, rep.to_json()


def cmd_gm_preserve(args):
    f, g = _pair(args)
    funcs = _functions(args.functions)
    s_tuples = sample_ordered_tuples(len(funcs), parse_window(args.domain), args.tuples,
                                     args.seed, args.min_gap)
    rep = ts.verify_gm_preservation(funcs, f, g, s_tuples, _tols(args), args.override,
                                    Sampling(args.pf_tuples, args.seed))
    return rep.passed, rep.to_json()


def cmd_tilt(args):
    f, g = _pair(args)
    rep = ts.verify_exp_tilt(_load_phi(args.phi), args.a, f, g, _s_grid(args, f), _tols(args),
                             args.override, args.seed)
    return rep.passed, rep.to_json()


def cmd_alpha(args):
    f, g = _pair(args)
    spec = args.alpha
    if spec.lstrip().startswith("{") or spec.endswith(".json"):
        data = json.loads(spec if spec.lstrip().startswith("{") else open(spec).read())
    else:
        data = {"name": spec, "a": args.a}
    try:
        alpha = ts.alpha_from_json(data)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    rep = ts.verify_alpha_monotone(_load_phi(args.phi), alpha, f, g, _s_grid(args, f),
                                   _tols(args), args.override, seed=args.seed)
    return rep.passed, rep.to_json()


def cmd_product_over_s(args):
    f, g = _pair(args)
    rep = ts.verify_product_over_s(f, g, _s_grid(args, f), _tols(args), args.override)
    return rep.passed, rep.to_json()


def cmd_conv_stability(args):
    f, g = _pair(args)
    if isinstance(f, Pmf):
        raise ConfigError("conv-stability needs continuous densities")
    grid = parse_grid(args.grid) if args.grid else None
    rep = ts.verify_convolution_stability(f, g, args.n, Sampling(args.tuples, args.seed),
                                          _tols(args), grid, override=args.override)
    return rep.passed, rep.to_json()


ANDREIEF_PRESETS = {
    "poly": lambda i, j: (lambda x: np.asarray(x, float) ** (i + j)),
    "power": lambda i, j: (lambda x: np.asarray(x, float) ** (i * j)),
    "exp": lambda i, j: (lambda x: np.exp((i + 1) * (j + 1) * np.asarray(x, float) / 3)),
}


def cmd_andreief(args):
    if args.preset not in ANDREIEF_PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; valid: "
                          f"{', '.join(ANDREIEF_PRESETS)}")
    make = ANDREIEF_PRESETS[args.preset]
    mat = [[make(i, j) for j in range(args.n)] for i in range(args.n)]
    res = andreief_check(mat, parse_window(args.interval), args.n, args.tol)
    passed = bool(res.rel_err <= args.tol and not res.capped)
    return passed, dict(res._asdict(), passed=passed)


def cmd_curve(args):
    f, g = _pair(args)
    phi = _load_phi(args.phi)
    grid = _s_grid(args, f)
    if isinstance(f, Pmf):
        curve = ee.discrete_curve(phi, f, g, grid)
    else:
        curve = ee.conditional_curve(phi, f, g, grid, mass_floor=args.mass_floor)
    return True, {"phi": phi.to_json(), "curve": _curve_json(curve)}


COMMANDS = {
    "check-pf": cmd_check_pf, "check-logconcave": cmd_check_logconcave,
    "check-gm": cmd_check_gm, "efron": cmd_efron, "gm-preserve": cmd_gm_preserve,
    "tilt": cmd_tilt, "alpha": cmd_alpha, "product-over-s": cmd_product_over_s,
    "conv-stability": cmd_conv_stability, "andreief": cmd_andreief, "curve": cmd_curve,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polya-efron",
                                description="Numerical checks for Polya frequency and "
                                            "Efron-type monotonicity claims.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def common(sp):
        sp.add_argument("--tuples", type=int, default=DEFAULTS["tuples"])
        sp.add_argument("--seed", type=int, default=DEFAULTS["seed"])
        sp.add_argument("--atol", type=float, default=DEFAULTS["atol"])
        sp.add_argument("--rtol", type=float, default=DEFAULTS["rtol"])
        sp.add_argument("--mass-floor", type=float, default=DEFAULTS["mass_floor"])
        sp.add_argument("--output", "-o", default="-", help="report path ('-' for stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--no-timestamp", action="store_true")
        sp.add_argument("--override", action="store_true",
                        help="run even when a hypothesis check fails")

    def pair(sp):
        sp.add_argument("--fx", required=True, help="law of X (JSON file or text)")
        sp.add_argument("--fy", required=True, help="law of Y (JSON file or text)")

    sp = sub.add_parser("check-pf", help="sampled PF_n check of a density")
    sp.add_argument("--density", required=True)
    sp.add_argument("--n", type=int, default=2)
    sp.add_argument("--domain", help="lo:hi sampling window")
    sp.add_argument("--min-gap", type=float, default=1e-3)
    common(sp)

    sp = sub.add_parser("check-logconcave", help="log-concavity of a density or pmf")
    sp.add_argument("--density", required=True)
    common(sp)

    sp = sub.add_parser("check-gm", help="sampled GM_n check of a function tuple")
    sp.add_argument("--functions", required=True, help="comma list, e.g. one,identity,square")
    sp.add_argument("--domain", default="-3:3")
    sp.add_argument("--min-gap", type=float, default=1e-3)
    common(sp)

    for name, text in (("efron", "s -> E[phi | X+Y=s] is non-decreasing"),
                       ("tilt", "s -> exp(-as) E[phi | X+Y=s] is non-decreasing"),
                       ("alpha", "s -> alpha(s) E[phi | X+Y=s] is non-decreasing"),
                       ("curve", "tabulate E[phi | X+Y=s] on a grid")):
        sp = sub.add_parser(name, help=text)
        pair(sp)
        sp.add_argument("--phi", required=True)
        sp.add_argument("--grid", required=True, help="lo:hi:count")
        if name in ("tilt", "alpha"):
            sp.add_argument("--a", type=float, default=0.0)
        if name == "alpha":
            sp.add_argument("--alpha", required=True,
                            help="unit | reciprocal | exp_tilt | JSON spec")
        common(sp)

    sp = sub.add_parser("gm-preserve", help="det(Phi_i(s_j)) >= 0 on sampled s tuples")
    pair(sp)
    sp.add_argument("--functions", required=True)
    sp.add_argument("--domain", default="-3:3")
    sp.add_argument("--min-gap", type=float, default=1e-3)
    sp.add_argument("--pf-tuples", type=int, default=200)
    common(sp)

    sp = sub.add_parser("product-over-s", help="E[XY | X+Y=s] / s is non-decreasing")
    pair(sp)
    sp.add_argument("--grid", required=True)
    common(sp)

    sp = sub.add_parser("conv-stability", help="PF_n of the convolution f * g")
    pair(sp)
    sp.add_argument("--n", type=int, default=2)
    sp.add_argument("--grid", help="tabulation grid lo:hi:count")
    common(sp)

    sp = sub.add_parser("andreief", help="Andreief identity on a preset function matrix")
    sp.add_argument("--preset", default="poly", help="poly | power | exp")
    sp.add_argument("--n", type=int, default=2)
    sp.add_argument("--interval", default="0:1")
    sp.add_argument("--tol", type=float, default=1e-10)
    common(sp)
    return p


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())
            if k not in ("output", "no_timestamp")}


def _write(text: str, path: str):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _csv(curve: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "phi", "mass", "err", "skipped"])
    for c in curve:
        w.writerow([repr(c["s"]), "" if c["phi"] is None else repr(c["phi"]),
                    repr(c["mass"]), repr(c["err"]), int(c["skipped"])])
    return buf.getvalue()


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    report = {"command": args.command, "config": _config(args)}
    if not args.no_timestamp:
        report["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    try:
        if args.format == "csv" and args.command != "curve":
            raise ConfigError("csv output is only available for the curve command")
        passed, result = COMMANDS[args.command](args)
        code = 0 if passed else 1
        report["result"] = result
    except ts.HypothesisError as exc:
        code = 1
        report["result"] = exc.to_json()
    except ts.WindowError as exc:
        code = 1
        report["result"] = {"passed": False, "refused": True, "reason": str(exc),
                            "required_window": list(exc.required)}
    except (ConfigError, DensityError, ee.PhiError, ee.EmptyCurveError, QuadratureError,
            ValueError, TypeError) as exc:
        print(f"polya-efron: error: {exc}", file=sys.stderr)
        return 2
    report["passed"] = code == 0
    if args.format == "csv":
        _write(_csv(report["result"]["curve"]), args.output)
    else:
        _write(json.dumps(ts.json_safe(report), indent=2, sort_keys=True) + "\n", args.output)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
