"""Quadrature, scaled determinants and seeded generators.

Everything here is a pure function of its arguments. The adaptive Simpson
integrator is vectorised: the integrand receives a 1-D array of abscissae and
returns either an array of the same length or an ``(m, len(x))`` array when
several integrals share one partition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MAX_PANELS = 2**20
DET_TOLERANCE = 1e-9


class QuadratureError(ArithmeticError):
    """Raised when the integrand produces a non-finite value."""

    def __init__(self, abscissa: float, value: float):
        super().__init__(f"integrand returned {value!r} at x={abscissa!r}")
        self.abscissa = abscissa
        self.value = value


class InfeasibleGapError(ValueError):
    pass


@dataclass(frozen=True)
class QuadResult:
    value: float | np.ndarray
    err_estimate: float | np.ndarray
    subdivisions: int
    capped: bool = False
    empty: bool = False


@dataclass(frozen=True)
class ScaledDet:
    sign: int
    log_magnitude: float
    normalized_det: float

    @property
    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(self.log_magnitude)


@dataclass(frozen=True)
class OrderedTuple:
    values: tuple
    min_gap: float = 0.0

    def __post_init__(self):
        if len(self.values) < 2:
            raise ValueError("ordered tuple needs at least 2 entries")
        for lo, hi in zip(self.values, self.values[1:]):
            if hi - lo < self.min_gap or hi <= lo:
                raise ValueError(f"values not strictly increasing with gap {self.min_gap}")

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def _simpson(h, fa, fm, fb):
    return h / 6.0 * (fa + 4.0 * fm + fb)


def _evaluate(integrand, x: np.ndarray, ncomp: int | None) -> np.ndarray:
    y = np.asarray(integrand(x), dtype=float)
    if y.ndim == 0:
        y = np.full(x.shape, float(y))
    if y.ndim == 1:
        y = y[None, :]
    if ncomp is not None and y.shape[0] != ncomp:
        raise ValueError("integrand changed its number of components")
    bad = ~np.isfinite(y)
    if bad.any():
        col = int(np.nonzero(bad.any(axis=0))[0][0])
        row = int(np.nonzero(bad[:, col])[0][0])
        raise QuadratureError(float(x[col]), float(y[row, col]))
    return y


def integrate(
    integrand: Callable[[np.ndarray], np.ndarray],
    interval: tuple[float, float],
    abs_tol: float | Sequence[float] = 1e-12,
    rel_tol: float = 1e-10,
    breakpoints: Sequence[float] = (),
    initial_panels: int = 16,
    max_panels: int = MAX_PANELS,
) -> QuadResult:
    """Adaptive composite Simpson rule with Richardson error control.

    Each leaf panel carries a coarse Simpson estimate and a two-half estimate;
    their difference is the leaf error and the returned value is the
    Richardson-extrapolated sum. Leaves are bisected until the summed error of
    every component is at most ``max(abs_tol, rel_tol * |value|)``.
    ``breakpoints`` inside the interval seed the partition so that kinks and
    jumps of the integrand sit on panel edges.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("integration interval must be finite")
    if hi <= lo:
        shape = np.shape(integrand(np.array([lo])))
        if len(shape) <= 1:
            return QuadResult(0.0, 0.0, 0, empty=True)
        return QuadResult(np.zeros(shape[0]), np.zeros(shape[0]), 0, empty=True)

    edges = [lo, hi]
    edges.extend(b for b in breakpoints if lo < b < hi)
    edges = np.unique(np.asarray(edges, dtype=float))
    seeds = []
    for a, b in zip(edges[:-1], edges[1:]):
        seeds.append(np.linspace(a, b, initial_panels + 1)[:-1])
    a = np.concatenate(seeds)
    b = np.append(a[1:], hi)
    keep = b > a
    a, b = a[keep], b[keep]

    # five points per leaf: a, (3a+b)/4, m, (a+3b)/4, b
    m = 0.5 * (a + b)
    # at a partition edge take the one-sided limit from inside the panel, so a
    # jump placed on a breakpoint is integrated exactly
    a_in = np.where(np.isin(a, edges), np.nextafter(a, b), a)
    b_in = np.where(np.isin(b, edges), np.nextafter(b, a), b)
    pts = np.concatenate([a_in, 0.5 * (a + m), m, 0.5 * (m + b), b_in])
    scalar = np.ndim(integrand(pts[:1])) <= 1
    vals = _evaluate(integrand, pts, None)
    ncomp = vals.shape[0]
    k = a.size
    fa, fl, fm, fr, fb = (vals[:, i * k:(i + 1) * k] for i in range(5))

    abs_tol = np.broadcast_to(np.asarray(abs_tol, dtype=float), (ncomp,))
    capped = False
    while True:
        h = b - a
        coarse = _simpson(h, fa, fm, fb)
        fine = _simpson(0.5 * h, fa, fl, fm) + _simpson(0.5 * h, fm, fr, fb)
        diff = fine - coarse
        err = np.abs(diff)
        value = (fine + diff / 15.0).sum(axis=1)
        total_err = err.sum(axis=1)
        target = np.maximum(abs_tol, rel_tol * np.abs(value))
        if np.all(total_err <= target):
            break
        nleaf = a.size
        # split the largest leaves until the untouched ones use at most half the budget
        share = (err / np.maximum(target, 1e-300)[:, None]).max(axis=0)
        order = np.argsort(share)
        keep_n = int(np.searchsorted(np.cumsum(share[order]), 0.5, side="right"))
        split = np.zeros(nleaf, dtype=bool)
        split[order[keep_n:]] = True
        # leaves too narrow to bisect in floating point are frozen
        split &= (m > a) & (m < b) & (0.5 * (a + m) > a) & (0.5 * (m + b) < b)
        if not split.any():
            capped = True
            break
        if nleaf + int(split.sum()) > max_panels:
            capped = True
            break
        sa, sb, sm = a[split], b[split], m[split]
        new_x = np.concatenate([0.5 * (sa + 0.5 * (sa + sm)), 0.5 * (0.5 * (sa + sm) + sm),
                                0.5 * (sm + 0.5 * (sm + sb)), 0.5 * (0.5 * (sm + sb) + sb)])
        nv = _evaluate(integrand, new_x, ncomp)
        ns = sa.size
        q1, q2, q3, q4 = (nv[:, i * ns:(i + 1) * ns] for i in range(4))
        left = (sa, sm, fa[:, split], q1, fl[:, split], q2, fm[:, split])
        right = (sm, sb, fm[:, split], q3, fr[:, split], q4, fb[:, split])
        keepm = ~split
        a = np.concatenate([a[keepm], left[0], right[0]])
        b = np.concatenate([b[keepm], left[1], right[1]])
        fa = np.concatenate([fa[:, keepm], left[2], right[2]], axis=1)
        fl = np.concatenate([fl[:, keepm], left[3], right[3]], axis=1)
        fm = np.concatenate([fm[:, keepm], left[4], right[4]], axis=1)
        fr = np.concatenate([fr[:, keepm], left[5], right[5]], axis=1)
        fb = np.concatenate([fb[:, keepm], left[6], right[6]], axis=1)
        m = 0.5 * (a + b)

    if scalar:
        return QuadResult(float(value[0]), float(total_err[0]), int(a.size), capped)
    return QuadResult(value, total_err, int(a.size), capped)


# ---------------------------------------------------------------------------
# determinants
# ---------------------------------------------------------------------------

def _lu_det(mat: np.ndarray) -> float:
    """Determinant by Gaussian elimination with partial pivoting."""
    a = np.array(mat, dtype=float, copy=True)
    n = a.shape[0]
    det = 1.0
    for j in range(n):
        p = j + int(np.argmax(np.abs(a[j:, j])))
        if a[p, j] == 0.0:
            return 0.0
        if p != j:
            a[[j, p]] = a[[p, j]]
            det = -det
        det *= a[j, j]
        if j + 1 < n:
            factors = a[j + 1:, j] / a[j, j]
            a[j + 1:, j:] -= np.outer(factors, a[j, j:])
    return det


def det_sign_scaled(matrix) -> ScaledDet:
    """Sign and magnitude of ``det(matrix)`` robust to wildly scaled rows.

    Rows, then columns, are divided by their largest absolute entry before
    elimination. Positive rescaling does not change the sign, so the sign of
    ``normalized_det`` is that of the original determinant.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError("expected a non-empty square matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    log_scale = 0.0
    rmax = np.abs(a).max(axis=1)
    if np.any(rmax == 0.0):
        return ScaledDet(0, -math.inf, 0.0)
    a /= rmax[:, None]
    log_scale += float(np.log(rmax).sum())
    cmax = np.abs(a).max(axis=0)
    if np.any(cmax == 0.0):
        return ScaledDet(0, -math.inf, 0.0)
    a /= cmax[None, :]
    log_scale += float(np.log(cmax).sum())
    return _finish(a, log_scale)


def det_sign_scaled_log(log_matrix) -> ScaledDet:
    """As :func:`det_sign_scaled` for a non-negative matrix given by its logs.

    Rescaling happens in log space, so entries like ``exp(-2000)`` keep their
    relative sizes instead of underflowing. ``-inf`` encodes an exact zero.
    """
    la = np.array(log_matrix, dtype=float)
    if la.ndim != 2 or la.shape[0] != la.shape[1]:
        raise ValueError("expected a square matrix")
    if np.any(np.isnan(la)) or np.any(la == np.inf):
        raise ValueError("log entries must be < +inf and not NaN")
    rmax = la.max(axis=1)
    if np.any(rmax == -np.inf):
        return ScaledDet(0, -math.inf, 0.0)
    la = la - rmax[:, None]
    cmax = la.max(axis=0)
    if np.any(cmax == -np.inf):
        return ScaledDet(0, -math.inf, 0.0)
    la = la - cmax[None, :]
    log_scale = float(rmax.sum() + cmax.sum())
    return _finish(np.exp(la), log_scale)


def _finish(scaled: np.ndarray, log_scale: float) -> ScaledDet:
    d = _lu_det(scaled)
    if d == 0.0:
        return ScaledDet(0, -math.inf, 0.0)
    return ScaledDet(1 if d > 0 else -1, math.log(abs(d)) + log_scale, d)


# ---------------------------------------------------------------------------
# seeded generators
# ---------------------------------------------------------------------------

def sample_ordered_tuples(
    n: int,
    domain_interval: tuple[float, float],
    count: int,
    seed: int,
    min_gap: float = 0.0,
    integer: bool = False,
) -> list[OrderedTuple]:
    """Draw ``count`` strictly increasing ``n``-tuples from the domain.

    Points are uniform on a shrunk interval, sorted, and the i-th point is then
    shifted by ``i * min_gap``; the result is a pure function of the arguments.
    In integer mode values are distinct integers with gaps of at least
    ``max(1, min_gap)``.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    lo, hi = float(domain_interval[0]), float(domain_interval[1])
    rng = np.random.default_rng(seed)
    if integer:
        gap = max(1, int(math.ceil(min_gap)))
        ilo, ihi = int(math.ceil(lo)), int(math.floor(hi))
        span = ihi - ilo - (n - 1) * (gap - 1)
        if span < n:
            raise InfeasibleGapError("infeasible gap: integer domain too small")
        out = []
        for _ in range(count):
            base = np.sort(rng.choice(span, size=n, replace=False))
            vals = ilo + base + np.arange(n) * (gap - 1)
            out.append(OrderedTuple(tuple(int(v) for v in vals), float(gap)))
        return out
    if min_gap < 0:
        raise ValueError("min_gap must be non-negative")
    width = hi - lo - (n - 1) * min_gap
    if width <= 0 or (min_gap == 0 and hi <= lo):
        raise InfeasibleGapError(
            f"infeasible gap: {n} points with gap {min_gap} do not fit in [{lo}, {hi}]")
    out = []
    for _ in range(count):
        u = np.sort(rng.uniform(0.0, width, size=n))
        vals = lo + u + np.arange(n) * min_gap
        for i in range(1, n):
            # shifting by i*min_gap can lose an ulp; push up to the exact gap
            while vals[i] - vals[i - 1] < min_gap or vals[i] <= vals[i - 1]:
                vals[i] = np.nextafter(vals[i], np.inf)
        out.append(OrderedTuple(tuple(float(v) for v in vals), float(min_gap)))
    return out


@dataclass(frozen=True)
class Staircase:
    """phi(x, y) = sum c_k 1[x >= u_k] + sum d_k 1[y >= v_k] with c_k, d_k >= 0."""

    x_steps: tuple = ()
    y_steps: tuple = ()
    seed: int | None = None
    steps: int = 0
    _arrays: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for _, c in (*self.x_steps, *self.y_steps):
            if c < 0:
                raise ValueError("staircase heights must be non-negative")
        xs = np.array([u for u, _ in self.x_steps], dtype=float)
        cs = np.array([c for _, c in self.x_steps], dtype=float)
        ys = np.array([v for v, _ in self.y_steps], dtype=float)
        ds = np.array([d for _, d in self.y_steps], dtype=float)
        object.__setattr__(self, "_arrays", (xs, cs, ys, ds))

    def __call__(self, x, y):
        xs, cs, ys, ds = self._arrays
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        if xs.size:
            out = out + ((x[..., None] >= xs) * cs).sum(axis=-1)
        if ys.size:
            out = out + ((y[..., None] >= ys) * ds).sum(axis=-1)
        return out

    @property
    def x_jumps(self) -> np.ndarray:
        return self._arrays[0]

    @property
    def y_jumps(self) -> np.ndarray:
        return self._arrays[2]


def monotone_staircase(seed: int, steps: int, domain: tuple[float, float] = (-3.0, 3.0),
                       integer: bool = False) -> Staircase:
    """Random staircase that is non-decreasing in each variable.

    ``steps`` jumps are drawn for each variable; heights are uniform on [0, 1),
    locations uniform on ``domain`` (rounded to integers in integer mode).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = domain
    u = rng.uniform(lo, hi, size=steps)
    c = rng.uniform(0.0, 1.0, size=steps)
    v = rng.uniform(lo, hi, size=steps)
    d = rng.uniform(0.0, 1.0, size=steps)
    if integer:
        u, v = np.round(u), np.round(v)
    return Staircase(tuple(zip(u.tolist(), c.tolist())), tuple(zip(v.tolist(), d.tolist())),
                     seed=seed, steps=steps)
