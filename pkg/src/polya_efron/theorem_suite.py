"""Numerical verifiers for the monotonicity and positivity claims.

Each verifier first checks the hypotheses of its claim on probe grids and
refuses (``HypothesisError``) when they fail, unless ``override=True`` is
passed for counterexample exploration. The verdict is then computed on a
grid of ``s`` values: a transformed curve ``alpha(s) * Phi(s)`` must not
drop between consecutive non-skipped grid points by more than
``atol + rtol * max|g| + err_i + err_{i+1}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .density_core import ConcavityReport, Density, Pmf, check_log_concave
from .efron_engine import (MASS_FLOOR, QUAD_TOL, CurveSample, PhiSpec, conditional_curve,
                           conditional_many, convolve, discrete_curve, of_x, product,
                           validate_phi)
from .numerics import DET_TOLERANCE, det_sign_scaled, sample_ordered_tuples
from .polya_checks import (DetCheckReport, FunctionTuple, Sampling, _Aggregate, check_gm_n,
                           check_pf_n)


@dataclass(frozen=True)
class Tolerances:
    atol: float = 1e-8
    rtol: float = 1e-10
    mass_floor: float = MASS_FLOOR
    quad_tol: float = QUAD_TOL
    probe_tol: float = 1e-12
    det_tol: float = DET_TOLERANCE


class HypothesisError(ValueError):
    """A hypothesis of the claim fails; ``witness`` pins where."""

    def __init__(self, theorem: str, hypothesis: str, witness: Any, report: Any = None):
        super().__init__(f"{theorem}: hypothesis {hypothesis!r} violated at {witness!r}")
        self.theorem = theorem
        self.hypothesis = hypothesis
        self.witness = witness
        self.report = report

    def to_json(self) -> dict:
        rep = self.report.to_json() if hasattr(self.report, "to_json") else self.report
        return {"theorem": self.theorem, "passed": False, "refused": True,
                "hypothesis": self.hypothesis, "witness": self.witness, "report": rep}


class WindowError(ValueError):
    def __init__(self, required: tuple, got: tuple):
        super().__init__(f"tabulation window {got} does not cover required window {required}")
        self.required = required
        self.got = got


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlphaTransform:
    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    params: dict = field(default_factory=dict)

    def __call__(self, s):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.asarray(self.func(np.asarray(s, dtype=float)), dtype=float)

    def to_json(self) -> dict:
        return {"name": self.name, **self.params}


def unit_alpha() -> AlphaTransform:
    return AlphaTransform("unit", lambda s: np.ones_like(s))


def reciprocal_alpha() -> AlphaTransform:
    return AlphaTransform("reciprocal", lambda s: 1.0 / s)


def exp_tilt_alpha(a: float) -> AlphaTransform:
    return AlphaTransform("exp_tilt", lambda s: np.exp(-a * s), {"a": a})


def tabulated_alpha(grid, values) -> AlphaTransform:
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        raise ValueError("alpha transforms must be positive")
    return AlphaTransform("tabulated", lambda s: np.interp(s, grid, values),
                          {"grid": grid.tolist(), "values": values.tolist()})


def alpha_from_json(data) -> AlphaTransform:
    if isinstance(data, str):
        data = {"name": data}
    name = data.get("name")
    if name == "unit":
        return unit_alpha()
    if name == "reciprocal":
        return reciprocal_alpha()
    if name == "exp_tilt":
        return exp_tilt_alpha(float(data["a"]))
    if name == "tabulated":
        return tabulated_alpha(data["grid"], data["values"])
    raise ValueError(f"unknown alpha {name!r}; valid: unit, reciprocal, exp_tilt, tabulated")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class MonotonicityReport:
    theorem: str
    transform_name: str
    samples: list
    errors: list
    max_violation: float
    passed: bool
    witness: dict | None
    tol_used: float
    segments: list
    skipped: list
    hypotheses: dict = field(default_factory=dict)
    seed: int | None = None

    def verdict(self) -> dict:
        return {"passed": self.passed, "max_violation": self.max_violation,
                "witness": self.witness, "samples": self.samples}

    def verdict_json(self) -> str:
        return json.dumps(json_safe(self.verdict()), sort_keys=True)

    def to_json(self) -> dict:
        s = [p[0] for p in self.samples]
        grid = {"lo": min(s + self.skipped), "hi": max(s + self.skipped),
                "count": len(s) + len(self.skipped)} if (s or self.skipped) else None
        return {"theorem": self.theorem, "transform": self.transform_name,
                "passed": self.passed, "max_violation": self.max_violation,
                "witness": self.witness, "tol_used": self.tol_used,
                "hypotheses": self.hypotheses, "grid": grid, "segments": self.segments,
                "skipped": self.skipped, "seed": self.seed,
                "samples": [{"s": a, "g": b, "err": e}
                            for (a, b), e in zip(self.samples, self.errors)]}


@dataclass(frozen=True)
class TiltConditionReport:
    condition1_ok: bool
    condition2_ok: bool
    worst_pair: dict | None
    mode: str
    a: float = 0.0

    @property
    def passed(self) -> bool:
        return self.condition1_ok and self.condition2_ok

    def to_json(self) -> dict:
        return {"condition1_ok": self.condition1_ok, "condition2_ok": self.condition2_ok,
                "worst_pair": self.worst_pair, "mode": self.mode, "a": self.a}


@dataclass
class DerivativeReport:
    a: float
    min_margin: float
    passed: bool
    margins: list
    bounds: list
    skipped: list
    fd_step: float
    tol: float

    def to_json(self) -> dict:
        return {"a": self.a, "min_margin": self.min_margin, "passed": self.passed,
                "margins": self.margins, "bounds": self.bounds, "skipped": self.skipped,
                "fd_step": self.fd_step, "tol": self.tol}


def json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return json_safe(obj.item())
    return obj


def assess_monotone(s, g, err, skipped, atol: float, rtol: float):
    """Consecutive-point monotonicity on each run of non-skipped points.

    Returns ``(max_violation, passed, witness, tol_used, segments)``.
    """
    s = np.asarray(s, float)
    g = np.asarray(g, float)
    err = np.asarray(err, float)
    skipped = np.asarray(skipped, bool)
    live = ~skipped
    gmax = float(np.abs(g[live]).max()) if live.any() else 0.0
    base = atol + rtol * gmax
    segments, start = [], None
    for i, ok in enumerate(live):
        if ok and start is None:
            start = i
        if (not ok or i == len(live) - 1) and start is not None:
            end = i if ok else i - 1
            segments.append((float(s[start]), float(s[end])))
            start = None
    max_drop, worst_excess, witness = 0.0, -math.inf, None
    for i in range(len(s) - 1):
        if not (live[i] and live[i + 1]):
            continue
        drop = float(g[i] - g[i + 1])
        slack = base + float(err[i] + err[i + 1])
        max_drop = max(max_drop, drop)
        if drop - slack > worst_excess:
            worst_excess = drop - slack
            if drop > slack:
                witness = {"s": [float(s[i]), float(s[i + 1])],
                           "g": [float(g[i]), float(g[i + 1])], "drop": drop, "slack": slack}
    passed = witness is None
    return max_drop, passed, witness, base, segments


def _monotone_report(theorem, transform_name, curve: Sequence[CurveSample], alpha,
                     tols: Tolerances, hypotheses, seed=None) -> MonotonicityReport:
    s = np.array([c.s for c in curve])
    skipped = np.array([c.skipped for c in curve])
    al = alpha(s)
    phi = np.array([c.phi_value for c in curve])
    g = np.where(skipped, np.nan, al * phi)
    err = np.where(skipped, 0.0, np.abs(al) * np.array([c.err_estimate for c in curve]))
    bad = ~skipped & ~np.isfinite(g)
    skipped = skipped | bad
    max_v, passed, witness, base, segments = assess_monotone(s, g, err, skipped, tols.atol,
                                                             tols.rtol)
    live = ~skipped
    samples = [(float(a), float(b)) for a, b in zip(s[live], g[live])]
    return MonotonicityReport(theorem, transform_name, samples, err[live].tolist(), max_v,
                              passed, witness, base, segments, s[skipped].tolist(),
                              hypotheses, seed)


# ---------------------------------------------------------------------------
# hypothesis probes
# ---------------------------------------------------------------------------

def _is_discrete(f, g) -> bool:
    if isinstance(f, Pmf) != isinstance(g, Pmf):
        raise TypeError("both laws must be continuous or both discrete")
    return isinstance(f, Pmf)


def _require_log_concave(theorem, f, g, override, hyps):
    for label, d in (("f", f), ("g", g)):
        rep: ConcavityReport = check_log_concave(d)
        hyps[f"{label}_log_concave"] = rep.passed
        if not rep.passed and not override:
            raise HypothesisError(theorem, f"{label}_log_concave", rep.witness, rep)


def _probe_axis(dist) -> np.ndarray:
    if isinstance(dist, Pmf):
        k = np.arange(dist.k_min, dist.k_max + 1)
        if k.size > 61:
            k = np.unique(np.round(np.linspace(dist.k_min, dist.k_max, 61))).astype(int)
        return k.astype(float)
    lo, hi = dist.central
    return np.linspace(lo, hi, 41)


def _first_drop(h: np.ndarray, tol: float, axis: int):
    """Locate the worst drop of h below its running maximum along ``axis``.

    NaN entries (points where h is undefined) are ignored.
    """
    hh = np.moveaxis(h, axis, 0)
    filled = np.where(np.isnan(hh), -np.inf, hh)
    runmax = np.maximum.accumulate(filled, axis=0)
    prev = np.vstack([np.full((1,) + hh.shape[1:], -np.inf), runmax[:-1]])
    scale = np.maximum(1.0, np.maximum(np.abs(np.where(np.isfinite(prev), prev, 0.0)),
                                       np.abs(np.nan_to_num(hh))))
    short = np.where(np.isnan(hh) | ~np.isfinite(prev), -np.inf, prev - hh - tol * scale)
    idx = np.unravel_index(int(np.argmax(short)), short.shape)
    if short[idx] <= 0:
        return None
    return idx, float(short[idx])


def probe_monotone(h: Callable, xs, ys, tol: float) -> tuple[bool, bool, dict | None]:
    """Check h(x, y) is non-decreasing in x for each y and in y for each x."""
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    with np.errstate(all="ignore"):
        H = np.asarray(h(X, Y), dtype=float)
    H = np.where(np.isfinite(H), H, np.nan)
    ok = []
    worst = None
    for axis, var in ((0, "x"), (1, "y")):
        hit = _first_drop(H, tol, axis)
        ok.append(hit is None)
        if hit is not None and worst is None:
            (i, j), short = hit
            if axis == 0:
                x2, y = xs[i], ys[j]
                col = H[:i, j]
                x1 = xs[int(np.nanargmax(col))]
                worst = {"variable": "x", "x1": float(x1), "x2": float(x2), "y": float(y),
                         "shortfall": short}
            else:
                x, y2 = xs[j], ys[i]
                row = H[j, :i]
                y1 = ys[int(np.nanargmax(row))]
                worst = {"variable": "y", "y1": float(y1), "y2": float(y2), "x": float(x),
                         "shortfall": short}
    return ok[0], ok[1], worst


def _window_axes(probe_window, f=None, g=None):
    if probe_window is None:
        return _probe_axis(f), _probe_axis(g)
    pw = np.asarray(probe_window, dtype=float)
    if pw.ndim == 1 and pw.size == 2:
        axis = np.linspace(pw[0], pw[1], 41)
        return axis, axis
    if pw.shape == (2, 2):
        return np.linspace(pw[0, 0], pw[0, 1], 41), np.linspace(pw[1, 0], pw[1, 1], 41)
    return pw, pw


def check_tilt_conditions(phi: PhiSpec, a: float, probe_window=None, mode: str = "continuous",
                          tol: float = 1e-12, f=None, g=None) -> TiltConditionReport:
    """Probe x -> e^{-ax} phi(x, y) and y -> e^{-ay} phi(x, y) for monotonicity.

    In discrete mode the lattice inequalities phi(x+1, y) >= e^a phi(x, y) and
    phi(x, y+1) >= e^a phi(x, y) are checked on an integer window, with a
    relative slack of ``tol`` for float rounding.
    """
    if mode == "discrete":
        if probe_window is None:
            xs, ys = _probe_axis(f), _probe_axis(g)
            xs = np.arange(xs.min(), xs.max() + 1)
            ys = np.arange(ys.min(), ys.max() + 1)
        else:
            pw = np.asarray(probe_window, dtype=float)
            if pw.shape == (2, 2):
                xs = np.arange(pw[0, 0], pw[0, 1] + 1)
                ys = np.arange(pw[1, 0], pw[1, 1] + 1)
            else:
                xs = ys = np.arange(pw[0], pw[1] + 1)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        P = phi(X, Y)
        ea = math.exp(a)
        results, worst = [], None
        for var, nxt, cur, pts in (("x", P[1:, :], P[:-1, :], (X[:-1, :], Y[:-1, :])),
                                   ("y", P[:, 1:], P[:, :-1], (X[:, :-1], Y[:, :-1]))):
            rhs = ea * cur
            slack = tol * np.maximum(np.abs(nxt), np.abs(rhs))
            short = rhs - nxt - slack
            k = np.unravel_index(int(np.argmax(short)), short.shape)
            ok = bool(short[k] <= 0)
            results.append(ok)
            if not ok and worst is None:
                worst = {"variable": var, "x": float(pts[0][k]), "y": float(pts[1][k]),
                         "shortfall": float(short[k])}
        return TiltConditionReport(results[0], results[1], worst, mode, a)

    xs, ys = _window_axes(probe_window, f, g)
    ok1, _, w1 = probe_monotone(lambda x, y: np.exp(-a * x) * phi(x, y), xs, ys, tol)
    _, ok2, w2 = probe_monotone(lambda x, y: np.exp(-a * y) * phi(x, y), xs, ys, tol)
    worst = w1 if not ok1 else (w2 if not ok2 else None)
    return TiltConditionReport(ok1, ok2, worst, mode, a)


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

def _curve(phi: PhiSpec, f, g, s_grid, tols: Tolerances):
    if _is_discrete(f, g):
        return discrete_curve(phi, f, g, [int(round(s)) for s in s_grid], 0.0)
    return conditional_curve(phi, f, g, s_grid, tols.quad_tol, tols.mass_floor)


def _alpha_monotone(theorem, phi, alpha: AlphaTransform, f, g, s_grid, tols, override,
                    hyps, check_concavity=True, seed=None) -> MonotonicityReport:
    if check_concavity:
        _require_log_concave(theorem, f, g, override, hyps)
    if not _is_discrete(f, g):
        validate_phi(phi, f, g)
    curve = _curve(phi, f, g, s_grid, tols)
    return _monotone_report(theorem, alpha.name, curve, alpha, tols, hyps, seed)


def verify_strong_efron(phi: PhiSpec, f, g, s_grid, tols: Tolerances = Tolerances(),
                        override: bool = False, seed=None) -> MonotonicityReport:
    """s -> E[phi(X, Y) | X + Y = s] is non-decreasing for log-concave X, Y."""
    theorem = "thm1_strong_efron"
    hyps: dict = {}
    _require_log_concave(theorem, f, g, override, hyps)
    xs, ys = _probe_axis(f), _probe_axis(g)
    ok1, ok2, worst = probe_monotone(phi, xs, ys, tols.probe_tol)
    hyps["phi_monotone_x"], hyps["phi_monotone_y"] = ok1, ok2
    if not (ok1 and ok2) and not override:
        raise HypothesisError(theorem, "phi_monotone", worst)
    return _alpha_monotone(theorem, phi, unit_alpha(), f, g, s_grid, tols, override, hyps,
                           check_concavity=False, seed=seed)


def verify_restricted_efron(phi_1d: Callable, f, g, s_grid, tols: Tolerances = Tolerances(),
                            override: bool = False, kinks: Sequence[float] = (),
                            name: str = "phi") -> tuple[MonotonicityReport, MonotonicityReport]:
    """Reports for Phi_X(s) = E[phi(X) | s] and Phi_Y(s) = E[phi(Y) | s].

    Phi_Y is evaluated by integrating over the Y variable, i.e. as
    E[phi(first) | s] with the laws swapped, so iid inputs give bit-identical
    reports.
    """
    theorem = "def6_restricted_efron"
    hyps: dict = {}
    _require_log_concave(theorem, f, g, override, hyps)
    axis = np.union1d(_probe_axis(f), _probe_axis(g))
    with np.errstate(all="ignore"):
        vals = np.asarray(phi_1d(axis), dtype=float) * np.ones_like(axis)
    drops = np.maximum.accumulate(vals)[:-1] - vals[1:]
    mono = bool(np.all(drops <= tols.probe_tol * np.maximum(1.0, np.abs(vals[1:]))))
    hyps["phi_monotone"] = mono
    if not mono and not override:
        k = int(np.argmax(drops))
        raise HypothesisError(theorem, "phi_monotone", {"x": float(axis[k + 1])})
    phi = of_x(phi_1d, name, kinks)
    rep_x = _alpha_monotone(theorem, phi, unit_alpha(), f, g, s_grid, tols, override, hyps,
                            check_concavity=False)
    rep_y = _alpha_monotone(theorem, phi, unit_alpha(), g, f, s_grid, tols, override,
                            dict(hyps), check_concavity=False)
    return rep_x, rep_y


def verify_exp_tilt(phi: PhiSpec, a: float, f, g, s_grid, tols: Tolerances = Tolerances(),
                    override: bool = False, seed=None) -> MonotonicityReport:
    """s -> e^{-as} Phi(s) is non-decreasing under the tilt conditions."""
    if a < 0:
        raise ValueError("a must be >= 0")
    discrete = _is_discrete(f, g)
    theorem = "thm4_discrete_exp_tilt" if discrete else "thm3_exp_tilt"
    hyps: dict = {}
    _require_log_concave(theorem, f, g, override, hyps)
    cond = check_tilt_conditions(phi, a, None, "discrete" if discrete else "continuous",
                                 tols.probe_tol, f, g)
    hyps["tilt_cond1"], hyps["tilt_cond2"] = cond.condition1_ok, cond.condition2_ok
    if not cond.passed and not override:
        which = "tilt_cond1" if not cond.condition1_ok else "tilt_cond2"
        raise HypothesisError(theorem, which, cond.worst_pair, cond)
    return _alpha_monotone(theorem, phi, exp_tilt_alpha(a), f, g, s_grid, tols, override, hyps,
                           check_concavity=False, seed=seed)


def verify_alpha_monotone(phi: PhiSpec, alpha: AlphaTransform, f, g, s_grid,
                          tols: Tolerances = Tolerances(), override: bool = False,
                          theorem: str = "prop6_alpha_monotone", seed=None
                          ) -> MonotonicityReport:
    """s -> alpha(s) Phi(s) is non-decreasing when alpha(x+y) phi(x, y) is
    non-decreasing in each variable."""
    hyps: dict = {}
    _require_log_concave(theorem, f, g, override, hyps)
    xs, ys = _probe_axis(f), _probe_axis(g)
    ok1, ok2, worst = probe_monotone(lambda x, y: alpha(x + y) * phi(x, y), xs, ys,
                                     tols.probe_tol)
    hyps["alpha_phi_monotone_x"], hyps["alpha_phi_monotone_y"] = ok1, ok2
    if not (ok1 and ok2) and not override:
        raise HypothesisError(theorem, "alpha_phi_monotone", worst)
    return _alpha_monotone(theorem, phi, alpha, f, g, s_grid, tols, override, hyps,
                           check_concavity=False, seed=seed)


def verify_product_over_s(f: Density, g: Density, s_grid, tols: Tolerances = Tolerances(),
                          override: bool = False) -> MonotonicityReport:
    """s -> E[XY | X + Y = s] / s is non-decreasing for positive log-concave X, Y."""
    theorem = "prop7_product_over_s"
    for label, d in (("f", f), ("g", g)):
        if d.support[0] < 0:
            raise HypothesisError(theorem, f"{label}_positive_support",
                                  {"support": list(d.support)})
    grid = np.asarray(s_grid, dtype=float)
    if np.any(grid <= 0):
        raise ValueError("s grid must lie in (0, inf)")
    return verify_alpha_monotone(product(), reciprocal_alpha(), f, g, grid, tols, override,
                                 theorem)


def corollary_derivative_check(phi: PhiSpec, a: float, f: Density, g: Density, s_grid,
                               fd_step: float = 1e-3, tol: float = 1e-6,
                               tols: Tolerances = Tolerances()) -> DerivativeReport:
    """Central-difference check of Phi'(s) - a Phi(s) >= 0 on the grid.

    The allowance at each point adds the fourth-point estimate of the
    O(h^2) truncation term and the propagated quadrature error.
    """
    validate_phi(phi, f, g)
    h = fd_step
    margins, bounds, skipped, used = [], [], [], []
    for s in np.asarray(s_grid, dtype=float):
        pts = s + h * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        vals, errs, ok = [], [], True
        for p in pts:
            mass, v, e, _ = conditional_many([phi], f, g, float(p), tols.quad_tol)
            if not (mass >= tols.mass_floor) or not np.isfinite(v[0]):
                ok = False
                break
            vals.append(float(v[0]))
            errs.append(float(e[0]))
        if not ok:
            skipped.append(float(s))
            continue
        vm2, vm1, v0, vp1, vp2 = vals
        deriv = (vp1 - vm1) / (2 * h)
        third = (vp2 - 2 * vp1 + 2 * vm1 - vm2) / (2 * h**3)
        bound = abs(third) * h * h / 6 + (errs[1] + errs[3]) / (2 * h) + abs(a) * errs[2]
        margins.append(deriv - a * v0)
        bounds.append(bound)
        used.append(float(s))
    if not margins:
        return DerivativeReport(a, math.nan, False, [], [], skipped, fd_step, tol)
    passed = all(m >= -(tol + b) for m, b in zip(margins, bounds))
    return DerivativeReport(a, float(min(margins)), passed,
                            [[s, m] for s, m in zip(used, margins)], bounds, skipped, fd_step,
                            tol)


def _phis_from_tuple(functions: FunctionTuple) -> list[PhiSpec]:
    return [of_x(fn, name, kinks) for fn, name, kinks in
            zip(functions.functions, functions.names, functions.kinks)]


def conditional_matrix(functions: FunctionTuple, f: Density, g: Density, s_tuple,
                       tols: Tolerances = Tolerances()):
    """Matrix (Phi_i(s_j)) with Phi_i(s) = E[phi_i(X) | X + Y = s].

    Returns ``(matrix, degenerate)``; a column whose conditioning mass is
    below the floor makes the tuple degenerate.
    """
    phis = _phis_from_tuple(functions)
    cols, degenerate = [], False
    for s in s_tuple:
        mass, vals, _, _ = conditional_many(phis, f, g, float(s), tols.quad_tol)
        if not (mass >= tols.mass_floor) or not np.all(np.isfinite(vals)):
            degenerate = True
            vals = np.zeros(len(phis))
        cols.append(vals)
    return np.column_stack(cols), degenerate


def verify_gm_preservation(functions: FunctionTuple, f: Density, g: Density, s_tuples,
                           tols: Tolerances = Tolerances(), override: bool = False,
                           sampling: Sampling | None = None) -> DetCheckReport:
    """det(Phi_i(s_j)) >= 0 for PF_n laws and a GM_n input tuple."""
    theorem = "thm2_gm_preservation"
    n = len(functions)
    sampling = sampling or Sampling(count=200)
    hyps = {}
    for label, d in (("f", f), ("g", g)):
        rep = check_pf_n(d, n, sampling, tols.det_tol)
        hyps[f"{label}_pf_{n}"] = rep.passed
        if not rep.passed and not override:
            raise HypothesisError(theorem, f"{label}_pf_{n}", rep.counterexample, rep)
    lo = min(f.central[0], g.central[0])
    hi = max(f.central[1], g.central[1])
    xt = sample_ordered_tuples(n, (lo, hi), sampling.count, sampling.seed, sampling.min_gap)
    gm = check_gm_n(functions, xt, tols.det_tol, sampling.seed)
    hyps[f"input_gm_{n}"] = gm.passed
    if not gm.passed and not override:
        raise HypothesisError(theorem, f"input_gm_{n}", gm.counterexample, gm)
    agg = _Aggregate(tols.det_tol)
    for st in s_tuples:
        svals = [float(v) for v in st]
        if len(svals) != n:
            raise ValueError("s tuples must have one entry per function")
        mat, degenerate = conditional_matrix(functions, f, g, svals, tols)
        degenerate = degenerate or len(set(svals)) < n
        det = det_sign_scaled(mat)
        if degenerate:
            det = type(det)(0, -math.inf, 0.0)
        agg.add(det, {"s": svals}, degenerate)
    report = agg.report("gm_preservation", n, sampling.seed)
    report.details = {"theorem": theorem, "hypotheses": hyps}
    return report


def _shift_ratio(f: Density, b: float) -> tuple[Callable, tuple]:
    def func(x):
        lx = f.logpdf(x)
        with np.errstate(invalid="ignore"):
            return np.where(np.isfinite(lx), np.exp(f.logpdf(x - b) - lx), 0.0)
    kinks = tuple(f.kinks) + tuple(k + b for k in f.kinks)
    return func, kinks


def verify_convolution_stability(f: Density, g: Density, n: int,
                                 sampling: Sampling | None = None,
                                 tols: Tolerances = Tolerances(), output_grid=None,
                                 identity_a=None, identity_b=None, identity_tol: float = 1e-6,
                                 override: bool = False) -> DetCheckReport:
    """Tabulate r = f * g, check PF_n on it, and cross-check the ratio identity
    E[f(X - b_i) / f(X) | X + Y = a_j] = r(a_j - b_i) / r(a_j)."""
    theorem = "prop5_convolution_stability"
    sampling = sampling or Sampling()
    hyps = {}
    for label, d in (("f", f), ("g", g)):
        rep = check_pf_n(d, n, sampling, tols.det_tol)
        hyps[f"{label}_pf_{n}"] = rep.passed
        if not rep.passed and not override:
            raise HypothesisError(theorem, f"{label}_pf_{n}", rep.counterexample, rep)
    probe = np.linspace(*f.central, 203)[1:-1]
    f_pos = bool(np.all(np.isfinite(f.logpdf(probe))))
    if not f_pos:
        probe_g = np.linspace(*g.central, 203)[1:-1]
        if np.all(np.isfinite(g.logpdf(probe_g))):
            f, g = g, f
            f_pos = True
    hyps["positive_density"] = f_pos
    if not f_pos and not override:
        raise HypothesisError(theorem, "positive_density", {"probe": "no density is positive"})

    required = (f.central[0] + g.central[0], f.central[1] + g.central[1])
    if output_grid is None:
        lo, hi = f.window[0] + g.window[0], f.window[1] + g.window[1]
        step = min(f.sd_scale, g.sd_scale) / 10
        grid = np.linspace(lo, hi, int(min(max((hi - lo) / step, 200), 4000)) + 1)
        # r can vanish at a finite edge of the sumset; refine geometrically there
        edges = []
        if math.isfinite(f.support[0]) and math.isfinite(g.support[0]):
            edges.append(lo + np.geomspace(1e-5 * step, step, 60))
        if math.isfinite(f.support[1]) and math.isfinite(g.support[1]):
            edges.append(hi - np.geomspace(1e-5 * step, step, 60))
        if edges:
            grid = np.union1d(grid, np.concatenate(edges))
    else:
        grid = np.asarray(output_grid, dtype=float)
        if grid[0] > required[0] or grid[-1] < required[1]:
            raise WindowError(required, (float(grid[0]), float(grid[-1])))

    if identity_a is None or identity_b is None:
        rng_tuples = sample_ordered_tuples(n, required, 2, sampling.seed, sampling.min_gap)
        identity_a = rng_tuples[0].values if identity_a is None else identity_a
        span = 0.1 * (required[1] - required[0])
        identity_b = tuple(np.linspace(0.0, span, n).tolist()) if identity_b is None \
            else identity_b
    a_arr = np.asarray(identity_a, dtype=float)
    b_arr = np.asarray(identity_b, dtype=float)
    extra = np.concatenate([a_arr, (a_arr[None, :] - b_arr[:, None]).ravel()])
    grid = np.union1d(grid, extra[(extra >= grid[0]) & (extra <= grid[-1])])
    r = convolve(f, g, grid, tols.quad_tol)

    pf = check_pf_n(r, n, Sampling(sampling.count, sampling.seed, sampling.domain or r.central,
                                   sampling.min_gap, sampling.adversarial), tols.det_tol)

    funcs = [_shift_ratio(f, float(b)) for b in b_arr]
    phis = [of_x(fn, f"ratio_b{i}", k) for i, (fn, k) in enumerate(funcs)]
    lhs = np.empty((n, n))
    for j, a in enumerate(a_arr):
        _, vals, _, _ = conditional_many(phis, f, g, float(a), tols.quad_tol)
        lhs[:, j] = vals
    rpdf = r.pdf
    rhs = np.array([[rpdf(a - b) / rpdf(a) for a in a_arr] for b in b_arr])
    ident_err = float(np.max(np.abs(lhs - rhs)))
    ident_ok = ident_err <= identity_tol

    report = DetCheckReport("convolution_stability", n, pf.tuples_checked,
                            pf.min_normalized_det, bool(pf.passed and ident_ok),
                            pf.counterexample, pf.tolerance, pf.degenerate, sampling.seed)
    report.details = {"theorem": theorem, "hypotheses": hyps,
                      "tabulation": {"lo": float(grid[0]), "hi": float(grid[-1]),
                                     "count": int(grid.size), "mass": float(r.mass)},
                      "pf_passed": pf.passed,
                      "identity": {"a": a_arr.tolist(), "b": b_arr.tolist(),
                                   "max_abs_err": ident_err, "tolerance": identity_tol,
                                   "passed": ident_ok}}
    report.convolution = r
    return report
