"""Conditional expectations along the line X + Y = s, and convolutions.

For independent X ~ f and Y ~ g,

    Phi(s) = int phi(x, s - x) f(x) g(s - x) dx / int f(x) g(s - x) dx.

Numerator and denominator are integrated on one shared adaptive partition.
The integrand is rescaled by the peak of ``f(x) g(s - x)`` before
integration so relative accuracy does not depend on how deep in the tails
``s`` sits.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .density_core import Density, DensitySpec, Pmf, make_density
from .numerics import QuadratureError, QuadResult, Staircase, integrate, monotone_staircase

MASS_FLOOR = 1e-12
QUAD_TOL = 1e-10
_PROBE_POINTS = 513


class PhiError(ValueError):
    pass


class EmptyCurveError(RuntimeError):
    pass


def _no_kinks(s: float) -> tuple:
    return ()


@dataclass(frozen=True, eq=False)
class PhiSpec:
    """A vectorised test function phi(x, y) with catalog metadata.

    ``kinks(s)`` returns the x-locations on the fibre {x + y = s} where phi
    jumps or bends; they seed the quadrature partition.
    """

    name: str
    params: Mapping[str, Any]
    func: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)
    kinks: Callable[[float], Sequence[float]] = field(default=_no_kinks, repr=False)
    super_exponential: bool = False

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self.func(x, y), dtype=float),
                               np.broadcast(x, y).shape)

    def to_json(self) -> dict:
        out = {"name": self.name}
        for k, v in self.params.items():
            out[k] = v.to_json() if isinstance(v, PhiSpec) else v
        return out


# -- univariate catalog ------------------------------------------------------

UNIVARIATE: dict[str, tuple[Callable, tuple]] = {
    "one": (lambda x: np.ones_like(x), ()),
    "identity": (lambda x: x, ()),
    "square": (lambda x: x * x, ()),
    "cube": (lambda x: x**3, ()),
    "exp": (np.exp, ()),
    "step": (lambda x: (x >= 0).astype(float), (0.0,)),
    "sigmoid": (lambda x: 0.5 * (1.0 + np.tanh(0.5 * x)), ()),
}


def univariate(name: str) -> tuple[Callable, tuple]:
    if name.startswith("monomial:"):
        k = int(name.split(":", 1)[1])
        return (lambda x: np.asarray(x, float) ** k), ()
    try:
        return UNIVARIATE[name]
    except KeyError:
        raise PhiError(f"unknown univariate function {name!r}; valid: "
                       f"{', '.join(UNIVARIATE)}, monomial:<k>") from None


# -- bivariate catalog -------------------------------------------------------

def of_x(func: Callable, name: str = "of_x", kinks: Sequence[float] = (),
         params: Mapping | None = None) -> PhiSpec:
    """phi(x, y) = func(x)."""
    ks = tuple(kinks)
    return PhiSpec(name, dict(params or {}), lambda x, y: func(x), lambda s: ks)


def of_y(func: Callable, name: str = "of_y", kinks: Sequence[float] = (),
         params: Mapping | None = None) -> PhiSpec:
    """phi(x, y) = func(y)."""
    ks = tuple(kinks)
    return PhiSpec(name, dict(params or {}), lambda x, y: func(y),
                   lambda s: tuple(s - k for k in ks))


def identity_x() -> PhiSpec:
    return PhiSpec("identity_x", {}, lambda x, y: x)


def identity_y() -> PhiSpec:
    return PhiSpec("identity_y", {}, lambda x, y: y)


def product() -> PhiSpec:
    return PhiSpec("product", {}, lambda x, y: x * y)


def sum_phi() -> PhiSpec:
    return PhiSpec("sum", {}, lambda x, y: x + y)


def constant(c: float = 1.0) -> PhiSpec:
    return PhiSpec("constant", {"c": c}, lambda x, y: np.full(np.broadcast(x, y).shape, c))


def exp_tilt(a: float) -> PhiSpec:
    return PhiSpec("exp_tilt", {"a": a}, lambda x, y: np.exp(a * (x + y)))


def separated(f_name: str, g_name: str) -> PhiSpec:
    fu, fk = univariate(f_name)
    gu, gk = univariate(g_name)
    return PhiSpec("separated", {"f": f_name, "g": g_name}, lambda x, y: fu(x) * gu(y),
                   lambda s: tuple(fk) + tuple(s - k for k in gk))


def cubic(alpha: float, beta: float) -> PhiSpec:
    """phi(x, y) = exp[x(x^2 + alpha) + y(y^2 + beta)]; compact supports only."""
    return PhiSpec("cubic", {"alpha": alpha, "beta": beta},
                   lambda x, y: np.exp(x * (x * x + alpha) + y * (y * y + beta)),
                   super_exponential=True)


def staircase(seed: int | None = None, steps: int = 8, domain=(-3.0, 3.0),
              integer: bool = False, stairs: Staircase | None = None) -> PhiSpec:
    if stairs is None:
        if seed is None:
            raise PhiError("staircase needs a seed or explicit steps")
        stairs = monotone_staircase(seed, steps, tuple(domain), integer=integer)
    xj, yj = tuple(stairs.x_jumps.tolist()), tuple(stairs.y_jumps.tolist())
    params = {"seed": stairs.seed, "steps": stairs.steps, "domain": list(domain)}
    if integer:
        params["integer"] = True
    if stairs.seed is None:
        params = {"x_steps": [list(t) for t in stairs.x_steps],
                  "y_steps": [list(t) for t in stairs.y_steps]}
    return PhiSpec("staircase", params, stairs, lambda s: xj + tuple(s - v for v in yj))


def tabulated_phi(xs, ys, values) -> PhiSpec:
    """Bilinear interpolation of a grid table, clamped to the grid edges."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    vals = np.asarray(values, dtype=float)
    if vals.shape != (xs.size, ys.size):
        raise PhiError("values must have shape (len(xs), len(ys))")
    interp = RegularGridInterpolator((xs, ys), vals, method="linear")

    def func(x, y):
        x, y = np.broadcast_arrays(np.clip(x, xs[0], xs[-1]), np.clip(y, ys[0], ys[-1]))
        return interp(np.stack([x.ravel(), y.ravel()], axis=-1)).reshape(x.shape)

    return PhiSpec("tabulated", {"xs": xs.tolist(), "ys": ys.tolist(), "values": vals.tolist()},
                   func, lambda s: tuple(xs.tolist()) + tuple((s - ys).tolist()))


def tilted(base: PhiSpec, a: float) -> PhiSpec:
    """exp(a (x + y)) * base(x, y)."""
    return PhiSpec("tilted", {"a": a, "base": base},
                   lambda x, y: np.exp(a * (x + y)) * base.func(x, y), base.kinks,
                   base.super_exponential)


def combine(c1: float, phi_a: PhiSpec, c2: float, phi_b: PhiSpec) -> PhiSpec:
    return PhiSpec("combination", {"c1": c1, "a": phi_a, "c2": c2, "b": phi_b},
                   lambda x, y: c1 * phi_a.func(x, y) + c2 * phi_b.func(x, y),
                   lambda s: tuple(phi_a.kinks(s)) + tuple(phi_b.kinks(s)),
                   phi_a.super_exponential or phi_b.super_exponential)


PHI_NAMES = ("identity_x", "identity_y", "product", "sum", "constant", "exp_tilt", "separated",
             "cubic", "staircase", "tabulated", "tilted")


def phi_from_json(data: Mapping[str, Any]) -> PhiSpec:
    name = data.get("name")
    if name == "identity_x":
        return identity_x()
    if name == "identity_y":
        return identity_y()
    if name == "product":
        return product()
    if name == "sum":
        return sum_phi()
    if name == "constant":
        return constant(float(data.get("c", 1.0)))
    if name == "exp_tilt":
        return exp_tilt(float(data["a"]))
    if name == "separated":
        return separated(data["f"], data["g"])
    if name == "cubic":
        return cubic(float(data["alpha"]), float(data["beta"]))
    if name == "staircase":
        if "x_steps" in data or "y_steps" in data:
            st = Staircase(tuple(tuple(t) for t in data.get("x_steps", ())),
                           tuple(tuple(t) for t in data.get("y_steps", ())))
            return staircase(stairs=st)
        return staircase(int(data["seed"]), int(data.get("steps", 8)),
                         tuple(data.get("domain", (-3.0, 3.0))), bool(data.get("integer", False)))
    if name == "tabulated":
        return tabulated_phi(data["xs"], data["ys"], data["values"])
    if name == "tilted":
        return tilted(phi_from_json(data["base"]), float(data["a"]))
    raise PhiError(f"unknown phi {name!r}; valid: {', '.join(PHI_NAMES)}")


def validate_phi(phi: PhiSpec, f: Density, g: Density) -> None:
    if phi.super_exponential:
        for d in (f, g):
            if not all(math.isfinite(v) for v in d.support):
                raise PhiError(f"{phi.name} grows faster than any density tail; it needs "
                               f"compactly supported densities, got {d.family}")


# ---------------------------------------------------------------------------
# continuous conditional expectations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurveSample:
    s: float
    phi_value: float
    denominator_mass: float
    err_estimate: float
    skipped: bool
    flag: str | None = None

    def to_json(self) -> dict:
        return {"s": self.s, "phi": None if self.skipped else self.phi_value,
                "mass": self.denominator_mass, "err": self.err_estimate,
                "skipped": self.skipped, "flag": self.flag}


def fiber_window(f: Density, g: Density, s: float) -> tuple[float, float]:
    return max(f.window[0], s - g.window[1]), min(f.window[1], s - g.window[0])


def _fiber_breaks(f: Density, g: Density, s: float, phis: Sequence[PhiSpec] = ()) -> list:
    br = list(f.kinks) + [s - k for k in g.kinks]
    for phi in phis:
        br.extend(phi.kinks(s))
    return br


def _log_weight(f: Density, g: Density, s: float):
    return lambda x: f.logpdf(x) + g.logpdf(s - x)


def _peak_shift(logw, lo: float, hi: float, breaks) -> float:
    probe = np.concatenate([np.linspace(lo, hi, _PROBE_POINTS),
                            [b for b in breaks if lo <= b <= hi]])
    lw = logw(probe)
    return float(lw.max()) if np.isfinite(lw).any() else -math.inf


def conditional_many(phis: Sequence[PhiSpec], f: Density, g: Density, s: float,
                     tol: float = QUAD_TOL):
    """Shared-partition quadrature of the fibre integrals for several phi.

    Returns ``(mass, values, errs, flag)``: the unscaled convolution density
    at ``s``, E[phi_i | X+Y=s] and their error estimates.
    """
    lo, hi = fiber_window(f, g, s)
    nphi = len(phis)
    nan = np.full(nphi, np.nan)
    if not hi > lo:
        return 0.0, nan, nan, "empty window"
    breaks = _fiber_breaks(f, g, s, phis)
    logw = _log_weight(f, g, s)
    shift = _peak_shift(logw, lo, hi, breaks)
    if shift == -math.inf:
        return 0.0, nan, nan, "zero weight on window"

    def integrand(x):
        w = np.exp(logw(x) - shift)
        rows = [w]
        pos = w > 0
        for phi in phis:
            v = phi(x, s - x)
            rows.append(np.where(pos, v * w, 0.0))
        return np.vstack(rows)

    probe = np.linspace(lo, hi, _PROBE_POINTS)
    pv = integrand(probe)
    scale = np.abs(pv).mean(axis=1) * (hi - lo)
    abs_tol = tol * np.maximum(scale, 1e-300)
    try:
        res = integrate(integrand, (lo, hi), abs_tol=abs_tol, rel_tol=tol, breakpoints=breaks)
    except QuadratureError as exc:
        return math.nan, nan, nan, f"quadrature failure: {exc}"
    den, den_err = float(res.value[0]), float(res.err_estimate[0])
    mass = den * math.exp(shift)
    if den <= 0:
        return mass, nan, nan, "zero denominator"
    vals = res.value[1:] / den
    errs = (res.err_estimate[1:] + np.abs(vals) * den_err) / den
    return mass, vals, errs, ("quadrature cap reached" if res.capped else None)


def conditional_expectation_2d(phi: PhiSpec, f: Density, g: Density, s: float,
                               tol: float = QUAD_TOL, mass_floor: float = MASS_FLOOR
                               ) -> CurveSample:
    validate_phi(phi, f, g)
    mass, vals, errs, flag = conditional_many([phi], f, g, s, tol)
    skipped = not (mass >= mass_floor) or not np.isfinite(vals[0])
    if skipped and flag is None:
        flag = "below mass floor"
    return CurveSample(float(s), float(vals[0]), float(mass), float(errs[0]), bool(skipped), flag)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("POLYA_EFRON_THREADS", "1")))
    except ValueError:
        return 1


def ordered_map(fn, items, workers: int | None = None) -> list:
    """Map preserving input order, optionally on a thread pool."""
    workers = thread_count() if workers is None else workers
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _check_grid(s_grid) -> np.ndarray:
    grid = np.asarray(s_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("s grid must be a non-empty 1-D sequence")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("s grid must be strictly increasing")
    return grid


def conditional_curve(phi: PhiSpec, f: Density, g: Density, s_grid, tol: float = QUAD_TOL,
                      mass_floor: float = MASS_FLOOR, workers: int | None = None
                      ) -> list[CurveSample]:
    grid = _check_grid(s_grid)
    validate_phi(phi, f, g)
    out = ordered_map(lambda s: conditional_expectation_2d(phi, f, g, float(s), tol, mass_floor),
                      grid.tolist(), workers)
    if all(c.skipped for c in out):
        raise EmptyCurveError("empty curve: every grid point fell below the mass floor")
    return out


# ---------------------------------------------------------------------------
# discrete
# ---------------------------------------------------------------------------

def discrete_conditional(phi: PhiSpec, pmf_x: Pmf, pmf_y: Pmf, s: int,
                         mass_floor: float = 0.0) -> CurveSample:
    """Exact finite-sum conditional expectation; ``err_estimate`` is 0."""
    s = int(s)
    k_lo = max(pmf_x.k_min, s - pmf_y.k_max)
    k_hi = min(pmf_x.k_max, s - pmf_y.k_min)
    if k_hi < k_lo:
        return CurveSample(float(s), math.nan, 0.0, 0.0, True, "outside sumset")
    k = np.arange(k_lo, k_hi + 1)
    fx = pmf_x.as_array()[k - pmf_x.k_min]
    fy = pmf_y.as_array()[s - k - pmf_y.k_min]
    w = fx * fy
    den = math.fsum(w)
    if den <= 0 or den < mass_floor:
        return CurveSample(float(s), math.nan, den, 0.0, True, "zero denominator")
    vals = phi(k.astype(float), (s - k).astype(float))
    num = math.fsum((np.where(w > 0, vals * w, 0.0)).tolist())
    return CurveSample(float(s), num / den, den, 0.0, False)


def discrete_curve(phi: PhiSpec, pmf_x: Pmf, pmf_y: Pmf, s_values,
                   mass_floor: float = 0.0) -> list[CurveSample]:
    out = [discrete_conditional(phi, pmf_x, pmf_y, int(s), mass_floor) for s in s_values]
    if all(c.skipped for c in out):
        raise EmptyCurveError("empty curve: no grid point lies in the sumset")
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_density_at(f: Density, g: Density, s: float, tol: float = QUAD_TOL) -> QuadResult:
    """Density of X + Y at ``s``; ``empty`` is set when the supports miss."""
    lo, hi = fiber_window(f, g, s)
    if not hi > lo:
        return QuadResult(0.0, 0.0, 0, empty=True)
    breaks = _fiber_breaks(f, g, s)
    logw = _log_weight(f, g, s)
    shift = _peak_shift(logw, lo, hi, breaks)
    if shift == -math.inf:
        return QuadResult(0.0, 0.0, 0, empty=True)
    res = integrate(lambda x: np.exp(logw(x) - shift), (lo, hi), abs_tol=0.0, rel_tol=tol,
                    breakpoints=breaks)
    scale = math.exp(shift)
    return QuadResult(res.value * scale, res.err_estimate * scale, res.subdivisions, res.capped)


def convolve(f: Density, g: Density, output_grid, tol: float = QUAD_TOL) -> Density:
    """Tabulate r = f * g on ``output_grid`` (log-linear between nodes).

    The result is not renormalised; its ``mass`` attribute records the mass
    captured by the grid.
    """
    grid = _check_grid(output_grid)
    vals = np.array([conv_density_at(f, g, float(s), tol).value for s in grid])
    with np.errstate(divide="ignore"):
        logv = np.log(vals)
    spec = DensitySpec("tabulated", grid=tuple(grid.tolist()), log_values=tuple(logv.tolist()))
    return make_density(spec, validate_mass=False)


def convolve_discrete(pmf_x: Pmf, pmf_y: Pmf) -> Pmf:
    w = np.convolve(pmf_x.as_array(), pmf_y.as_array())
    tx, ty = pmf_x.truncated_mass, pmf_y.truncated_mass
    return Pmf(pmf_x.k_min + pmf_y.k_min, tuple(w.tolist()), tx + ty - tx * ty)
