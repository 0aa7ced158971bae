"""Continuous densities, integer pmfs and log-concavity checks."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy import special, stats

# Quadrature windows cut tails whose mass is below this.
TAIL_MASS = 1e-30
TAIL_LOG = -math.log(TAIL_MASS)  # ~69.08 scale units for exponential tails
GAUSS_SIGMAS = 12.0
MASS_TOL = 1e-8
_ULP_SLACK = 8 * np.finfo(float).eps

CONTINUOUS_FAMILIES = ("gaussian", "exponential", "laplace", "uniform", "logistic", "gamma",
                       "tabulated")
DISCRETE_FAMILIES = ("poisson", "binomial", "geometric", "table")


class DensityError(ValueError):
    """Invalid density or pmf parameters; ``field`` names the offender."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class DensitySpec:
    family: str
    params: Mapping[str, float] = field(default_factory=dict)
    grid: tuple = ()
    log_values: tuple = ()

    def to_json(self) -> dict:
        if self.family == "tabulated":
            return {"kind": "continuous", "family": "tabulated", "grid": list(self.grid),
                    "log_values": [_json_float(v) for v in self.log_values]}
        return {"kind": "continuous", "family": self.family, "params": dict(self.params)}


def _json_float(v: float):
    return v if math.isfinite(v) else ("-inf" if v < 0 else "inf")


def _require(cond: bool, message: str, name: str):
    if not cond:
        raise DensityError(message, name)


class Density:
    """Validated, immutable continuous density handle.

    ``logpdf`` is vectorised and returns ``-inf`` outside the support.
    ``window`` is the finite interval used for quadrature (tails of mass below
    1e-30 removed), ``central`` a narrower window used for probe grids and
    tuple sampling, and ``kinks`` the points where the density is not smooth.
    """

    def __init__(self, spec: DensitySpec, validate_mass: bool = True):
        self.spec = spec
        self.family = spec.family
        self.params = dict(spec.params)
        builder = getattr(self, f"_init_{self.family}", None)
        if builder is None:
            raise DensityError(
                f"unknown family {self.family!r}; valid: {', '.join(CONTINUOUS_FAMILIES)}",
                "family")
        builder(validate_mass)

    # -- families ---------------------------------------------------------
    def _param(self, name, default=None):
        if name not in self.params:
            if default is None:
                raise DensityError("missing parameter", name)
            return float(default)
        value = float(self.params[name])
        _require(math.isfinite(value), "must be finite", name)
        return value

    def _init_gaussian(self, _):
        mu, sigma = self._param("mu", 0.0), self._param("sigma", 1.0)
        _require(sigma > 0, "sigma must be > 0", "sigma")
        c = -0.5 * math.log(2 * math.pi) - math.log(sigma)
        self._logpdf = lambda x: c - 0.5 * ((x - mu) / sigma) ** 2
        self.support = (-math.inf, math.inf)
        self.window = (mu - GAUSS_SIGMAS * sigma, mu + GAUSS_SIGMAS * sigma)
        self.central = (mu - 5 * sigma, mu + 5 * sigma)
        self.kinks = ()
        self._dist = stats.norm(mu, sigma)

    def _init_exponential(self, _):
        rate = self._param("rate", 1.0)
        _require(rate > 0, "rate must be > 0", "rate")
        lr = math.log(rate)
        self._logpdf = lambda x: np.where(x >= 0, lr - rate * np.maximum(x, 0.0), -np.inf)
        self.support = (0.0, math.inf)
        self.window = (0.0, TAIL_LOG / rate)
        self.central = (0.0, 10.0 / rate)
        self.kinks = (0.0,)
        self._dist = stats.expon(scale=1 / rate)

    def _init_laplace(self, _):
        mu, b = self._param("mu", 0.0), self._param("b", 1.0)
        _require(b > 0, "b must be > 0", "b")
        c = -math.log(2 * b)
        self._logpdf = lambda x: c - np.abs(x - mu) / b
        self.support = (-math.inf, math.inf)
        self.window = (mu - TAIL_LOG * b, mu + TAIL_LOG * b)
        self.central = (mu - 8 * b, mu + 8 * b)
        self.kinks = (mu,)
        self._dist = stats.laplace(mu, b)

    def _init_uniform(self, _):
        lo, hi = self._param("lo", 0.0), self._param("hi", 1.0)
        _require(lo < hi, "lo must be < hi", "lo")
        c = -math.log(hi - lo)
        self._logpdf = lambda x: np.where((x >= lo) & (x <= hi), c, -np.inf)
        self.support = (lo, hi)
        self.window = (lo, hi)
        self.central = (lo, hi)
        self.kinks = (lo, hi)
        self._dist = stats.uniform(lo, hi - lo)

    def _init_logistic(self, _):
        mu, s = self._param("mu", 0.0), self._param("scale", 1.0)
        _require(s > 0, "scale must be > 0", "scale")
        ls = math.log(s)

        def logpdf(x):
            z = np.abs((x - mu) / s)
            return -z - 2.0 * np.log1p(np.exp(-z)) - ls

        self._logpdf = logpdf
        self.support = (-math.inf, math.inf)
        self.window = (mu - TAIL_LOG * s, mu + TAIL_LOG * s)
        self.central = (mu - 8 * s, mu + 8 * s)
        self.kinks = ()
        self._dist = stats.logistic(mu, s)

    def _init_gamma(self, _):
        k, rate = self._param("shape", 1.0), self._param("rate", 1.0)
        _require(k >= 1, "shape must be >= 1 (log-concave range)", "shape")
        _require(rate > 0, "rate must be > 0", "rate")
        c = k * math.log(rate) - special.gammaln(k)

        def logpdf(x):
            x = np.asarray(x, dtype=float)
            pos = x > 0
            xs = np.where(pos, x, 1.0)
            out = np.where(pos, c + (k - 1) * np.log(xs) - rate * xs, -np.inf)
            if k == 1:
                out = np.where(x == 0, c, out)
            return out

        self._logpdf = logpdf
        self._dist = stats.gamma(k, scale=1 / rate)
        self.support = (0.0, math.inf)
        self.window = (0.0, float(self._dist.isf(TAIL_MASS)))
        self.central = (0.0, float(self._dist.isf(1e-5)))
        self.kinks = (0.0,)

    def _init_tabulated(self, validate_mass):
        grid = np.asarray(self.spec.grid, dtype=float)
        logv = np.asarray([float(v) for v in self.spec.log_values], dtype=float)
        _require(grid.ndim == 1 and grid.size >= 4, "grid too short (need >= 4 points)", "grid")
        _require(logv.shape == grid.shape, "log_values must match grid length", "log_values")
        _require(bool(np.all(np.isfinite(grid))), "grid must be finite", "grid")
        _require(bool(np.all(np.diff(grid) > 0)), "grid must be strictly increasing", "grid")
        _require(not np.any(np.isnan(logv)) and not np.any(logv == np.inf),
                 "log_values must be < +inf", "log_values")
        _require(bool(np.any(np.isfinite(logv))), "density is identically zero", "log_values")
        self._grid, self._logv = grid, logv
        self.mass = tabulated_mass(grid, logv)
        if validate_mass:
            _require(abs(self.mass - 1.0) <= MASS_TOL,
                     f"total mass {self.mass!r} differs from 1 by more than {MASS_TOL}",
                     "log_values")
        finite = np.nonzero(np.isfinite(logv))[0]
        lo_i, hi_i = int(finite[0]), int(finite[-1])
        self.support = (float(grid[lo_i]), float(grid[hi_i]))
        self.window = self.support
        seg = _segment_masses(grid, logv)
        cdf = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
        qlo = grid[max(int(np.searchsorted(cdf, 0.005)) - 1, lo_i)]
        qhi = grid[min(int(np.searchsorted(cdf, 0.995)), hi_i)]
        self.central = (float(qlo), float(qhi))
        self.kinks = tuple(grid[lo_i:hi_i + 1].tolist())
        self._dist = None
        self._logpdf = self._tab_logpdf

    def _tab_logpdf(self, x):
        grid, logv = self._grid, self._logv
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, grid.size - 2)
        x0, x1 = grid[idx], grid[idx + 1]
        l0, l1 = logv[idx], logv[idx + 1]
        t = (x - x0) / (x1 - x0)
        both = np.isfinite(l0) & np.isfinite(l1)
        with np.errstate(invalid="ignore"):
            out = np.where(both, l0 + t * (np.where(both, l1, 0.0) - np.where(both, l0, 0.0)),
                           -np.inf)
        # a segment with a -inf end is zero inside but keeps its finite node
        out = np.where(x == x0, l0, out)
        out = np.where(x == x1, l1, out)
        return np.where((x >= grid[0]) & (x <= grid[-1]), out, -np.inf)

    # -- evaluation ---------------------------------------------------------
    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.asarray(self._logpdf(x), dtype=float)
        return np.where(np.isnan(x), np.nan, out) if out.shape else out

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        if self._dist is not None:
            return self._dist.cdf(x)
        raise NotImplementedError("cdf is only available for named families")

    def probe_grid(self, count: int = 41) -> np.ndarray:
        lo, hi = self.central
        return np.linspace(lo, hi, count)

    @property
    def sd_scale(self) -> float:
        lo, hi = self.central
        return (hi - lo) / 10.0

    @property
    def positive_support(self) -> bool:
        return self.support[0] >= 0.0

    def to_json(self) -> dict:
        return self.spec.to_json()

    def __repr__(self) -> str:
        if self.family == "tabulated":
            return f"Density(tabulated, {self._grid.size} points)"
        return f"Density({self.family}, {self.params})"


def _segment_masses(grid: np.ndarray, logv: np.ndarray) -> np.ndarray:
    """Exact integral of exp(log-linear interpolant) on each grid segment."""
    h = np.diff(grid)
    l0, l1 = logv[:-1], logv[1:]
    ok = np.isfinite(l0) & np.isfinite(l1)
    l0s, l1s = np.where(ok, l0, 0.0), np.where(ok, l1, 0.0)
    d = l1s - l0s
    top = np.maximum(l0s, l1s)
    # h * (e^l1 - e^l0) / (l1 - l0), written as e^top * h * -expm1(-|d|) / |d|
    ad = np.abs(d)
    safe = np.where(ad > 1e-12, ad, 1.0)
    ratio = np.where(ad > 1e-12, -np.expm1(-ad) / safe, 1.0 - ad / 2)
    return np.where(ok, np.exp(top) * h * ratio, 0.0)


def tabulated_mass(grid, log_values) -> float:
    return float(math.fsum(_segment_masses(np.asarray(grid, float),
                                           np.asarray(log_values, float))))


def tabulate(logf, grid, normalize: bool = True) -> DensitySpec:
    """Build a tabulated spec from a log-density callable sampled on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    with np.errstate(divide="ignore"):
        logv = np.asarray(logf(grid), dtype=float)
    if normalize:
        logv = logv - math.log(tabulated_mass(grid, logv))
    return DensitySpec("tabulated", grid=tuple(grid.tolist()), log_values=tuple(logv.tolist()))


def make_density(spec: DensitySpec | Mapping[str, Any], validate_mass: bool = True) -> Density:
    if isinstance(spec, Mapping):
        spec = density_spec_from_json(spec)
    return Density(spec, validate_mass=validate_mass)


def density_spec_from_json(data: Mapping[str, Any]) -> DensitySpec:
    if data.get("kind", "continuous") != "continuous":
        raise DensityError("expected kind 'continuous'", "kind")
    family = data.get("family")
    if family not in CONTINUOUS_FAMILIES:
        raise DensityError(
            f"unknown family {family!r}; valid: {', '.join(CONTINUOUS_FAMILIES)}", "family")
    if family == "tabulated":
        logv = tuple(float(v) for v in data.get("log_values", ()))
        return DensitySpec("tabulated", grid=tuple(float(g) for g in data.get("grid", ())),
                           log_values=logv)
    return DensitySpec(family, dict(data.get("params", {})))


# ---------------------------------------------------------------------------
# discrete
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pmf:
    """Probability table on the contiguous integers k_min .. k_min+len-1.

    Infinite families are truncated, not renormalised; the removed mass is
    kept in ``truncated_mass``.
    """

    k_min: int
    weights: tuple
    truncated_mass: float = 0.0
    family: str = "table"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) == 0:
            raise DensityError("empty table", "weights")
        if any((not math.isfinite(w)) or w < 0 for w in self.weights):
            raise DensityError("negative weight", "weights")
        if self.truncated_mass < 0:
            raise DensityError("truncated mass must be >= 0", "truncated_mass")
        total = math.fsum(self.weights) + self.truncated_mass
        if abs(total - 1.0) > 1e-12:
            raise DensityError(f"weights sum to {total!r}, not 1", "weights")

    @property
    def k_max(self) -> int:
        return self.k_min + len(self.weights) - 1

    @property
    def support(self) -> range:
        return range(self.k_min, self.k_max + 1)

    def __call__(self, k: int) -> float:
        if self.k_min <= k <= self.k_max:
            return self.weights[k - self.k_min]
        return 0.0

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def to_json(self) -> dict:
        if self.family == "table":
            return {"kind": "discrete", "family": "table",
                    "params": {"weights": list(self.weights), "k_min": self.k_min}}
        return {"kind": "discrete", "family": self.family, "params": dict(self.params)}


def _trim(k_min: int, w: np.ndarray, cutoff: float):
    keep = np.nonzero(w >= cutoff)[0]
    lo, hi = int(keep[0]), int(keep[-1])
    return k_min + lo, w[lo:hi + 1]


def make_pmf(family: str, params: Mapping[str, Any] | None = None,
             truncation_tol: float = 1e-16) -> Pmf:
    """Build a pmf from a named family or an explicit table.

    ``table`` weights are normalised (they are given up to proportionality);
    infinite families are cut where the weight drops below
    ``truncation_tol * max weight``.
    """
    params = dict(params or {})
    if family == "poisson":
        lam = float(params.get("lambda", params.get("lam", 1.0)))
        _require(lam > 0, "lambda must be > 0", "lambda")
        dist = stats.poisson(lam)
        hi = int(lam + 40 * math.sqrt(lam) - 2 * math.log(truncation_tol)) + 10
        k = np.arange(0, hi + 1)
        w = np.exp(k * math.log(lam) - lam - special.gammaln(k + 1))
        k_min, w = _trim(0, w, truncation_tol * w.max())
        k_max = k_min + w.size - 1
        cut = float(dist.cdf(k_min - 1) + dist.sf(k_max))
        return Pmf(k_min, tuple(w.tolist()), cut, "poisson", {"lambda": lam})
    if family == "binomial":
        m = int(params.get("m", params.get("n", 1)))
        p = float(params.get("p", 0.5))
        _require(m >= 0, "m must be >= 0", "m")
        _require(0.0 <= p <= 1.0, "p must be in [0, 1]", "p")
        k = np.arange(0, m + 1)
        w = np.array([math.comb(m, int(i)) * p ** int(i) * (1 - p) ** (m - int(i)) for i in k])
        k_min, w = _trim(0, w, np.nextafter(0.0, 1.0))
        return Pmf(k_min, tuple(w.tolist()), 0.0, "binomial", {"m": m, "p": p})
    if family == "geometric":
        p = float(params.get("p", 0.5))
        _require(0.0 < p < 1.0, "p must be in (0, 1)", "p")
        q = 1.0 - p
        kmax = int(math.ceil(math.log(truncation_tol) / math.log(q)))
        w = np.array([p * q**i for i in range(kmax + 1)])
        k_min, w = _trim(0, w, truncation_tol * w.max())
        cut = q ** (k_min + w.size)
        return Pmf(k_min, tuple(w.tolist()), float(cut), "geometric", {"p": p})
    if family == "table":
        raw = params.get("weights", params.get("list"))
        if raw is None or len(raw) == 0:
            raise DensityError("empty table", "weights")
        w = np.asarray([float(v) for v in raw], dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DensityError("negative weight", "weights")
        if w.sum() <= 0:
            raise DensityError("table has zero mass", "weights")
        w = w / w.sum()
        k_min = int(params.get("k_min", 0))
        return Pmf(k_min, tuple(w.tolist()), 0.0, "table", {})
    raise DensityError(f"unknown family {family!r}; valid: {', '.join(DISCRETE_FAMILIES)}",
                       "family")


def pmf_from_json(data: Mapping[str, Any], truncation_tol: float = 1e-16) -> Pmf:
    if data.get("kind") != "discrete":
        raise DensityError("expected kind 'discrete'", "kind")
    return make_pmf(data.get("family"), data.get("params", {}), truncation_tol)


def load_spec(data: Mapping[str, Any] | str) -> Density | Pmf:
    """Parse a density or pmf JSON document (dict, JSON text or file path)."""
    if isinstance(data, str):
        text = data
        if not text.lstrip().startswith("{"):
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        data = json.loads(text)
    if data.get("kind") == "discrete":
        return pmf_from_json(data)
    return make_density(data)


# ---------------------------------------------------------------------------
# log-concavity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConcavityReport:
    passed: bool
    worst_margin: float
    witness: Any = None
    tolerance: float = 0.0
    checked: int = 0

    def to_json(self) -> dict:
        return {"passed": self.passed, "worst_margin": self.worst_margin,
                "witness": self.witness, "tolerance": self.tolerance, "checked": self.checked}


def check_log_concave_discrete(pmf: Pmf, tol: float = 0.0) -> ConcavityReport:
    """Check f(k)^2 >= f(k-1) f(k+1) at every interior k with positive neighbours.

    Margins are normalised by f(mode)^2. Differences within a few ulps of the
    products are treated as exact equality, so the float rounding of
    geometric weights does not register as a violation.
    """
    w = pmf.as_array()
    fmode2 = float(w.max()) ** 2
    worst, witness, checked = math.inf, None, 0
    for i in range(1, w.size - 1):
        prod = w[i - 1] * w[i + 1]
        if prod <= 0:
            continue
        checked += 1
        sq = w[i] * w[i]
        raw = sq - prod
        if abs(raw) <= _ULP_SLACK * max(sq, prod):
            raw = 0.0
        margin = raw / fmode2
        if margin < worst:
            worst, witness = margin, pmf.k_min + i
    if checked == 0:
        return ConcavityReport(True, 0.0, None, tol, 0)
    passed = bool(worst >= -tol)
    return ConcavityReport(passed, float(worst), None if passed else witness, tol, checked)


def check_log_concave_continuous(density: Density, probe_grid=None,
                                 tol: float = 1e-12) -> ConcavityReport:
    """Midpoint log-concavity test on all grid pairs x < y.

    Pairs where either endpoint has zero density are skipped. The check is
    limited by the resolution of the grid.
    """
    grid = density.probe_grid() if probe_grid is None else np.asarray(probe_grid, dtype=float)
    grid = np.sort(grid)
    lf = density.logpdf(grid)
    fin = np.isfinite(lf)
    if not fin.any():
        raise DensityError("probe grid lies entirely outside the support", "probe_grid")
    x, lx = grid[fin], lf[fin]
    i, j = np.triu_indices(x.size, k=1)
    if i.size == 0:
        return ConcavityReport(True, 0.0, None, tol, 0)
    mid = density.logpdf(0.5 * (x[i] + x[j]))
    avg = 0.5 * (lx[i] + lx[j])
    raw = mid - avg
    scale = np.maximum(np.abs(mid), np.abs(avg))
    raw = np.where(np.abs(raw) <= _ULP_SLACK * np.maximum(scale, 1.0), 0.0, raw)
    k = int(np.argmin(raw))
    worst = float(raw[k])
    passed = bool(worst >= -tol)
    witness = None if passed else (float(x[i[k]]), float(x[j[k]]))
    return ConcavityReport(passed, worst, witness, tol, int(i.size))


def check_log_concave(dist: Density | Pmf, tol: float | None = None) -> ConcavityReport:
    if isinstance(dist, Pmf):
        return check_log_concave_discrete(dist, 0.0 if tol is None else tol)
    return check_log_concave_continuous(dist, None, 1e-12 if tol is None else tol)
