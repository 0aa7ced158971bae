"""Sampled PF_n and GM_n determinant checks and the Andreief identity.

Definitions quantified over all ordered tuples are checked on seeded samples
plus a few adversarial tuples; a pass is evidence, not proof, and reports
label themselves as sampled checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .density_core import Density
from .numerics import (DET_TOLERANCE, ScaledDet, det_sign_scaled,
                       det_sign_scaled_log, integrate, sample_ordered_tuples)


@dataclass(frozen=True)
class Sampling:
    count: int = 1000
    seed: int = 1
    domain: tuple | None = None
    min_gap: float = 1e-3
    adversarial: bool = True


@dataclass
class DetCheckReport:
    check: str
    n: int
    tuples_checked: int
    min_normalized_det: float
    passed: bool
    counterexample: dict | None
    tolerance: float
    degenerate: int = 0
    seed: int | None = None
    label: str = "sampled check"
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"check": self.check, "n": self.n, "tuples": self.tuples_checked,
               "min_normalized_det": self.min_normalized_det, "passed": self.passed,
               "counterexample": self.counterexample, "seed": self.seed,
               "tolerance": self.tolerance, "degenerate": self.degenerate,
               "label": self.label}
        if self.details:
            out["details"] = self.details
        return out


class _Aggregate:
    """Order-deterministic accumulation of per-tuple determinant results."""

    def __init__(self, tol: float):
        self.tol = tol
        self.count = 0
        self.degenerate = 0
        self.min_det = math.inf
        self.worst = None

    def add(self, det: ScaledDet, witness: dict, degenerate: bool = False):
        self.count += 1
        if degenerate:
            self.degenerate += 1
        if det.normalized_det < self.min_det:
            self.min_det = float(det.normalized_det)
            self.worst = dict(witness, normalized_det=float(det.normalized_det))

    def report(self, check: str, n: int, seed) -> DetCheckReport:
        min_det = self.min_det if self.count else 0.0
        passed = bool(min_det >= -self.tol)
        return DetCheckReport(check, n, self.count, min_det, passed,
                              None if passed else self.worst, self.tol, self.degenerate, seed)


@dataclass(frozen=True)
class FunctionTuple:
    """Ordered functions (phi_1, ..., phi_n), each vectorised in x."""

    functions: tuple
    names: tuple = ()
    kinks: tuple = ()

    def __post_init__(self):
        if not self.names:
            object.__setattr__(self, "names", tuple(f"phi_{i + 1}"
                                                    for i in range(len(self.functions))))
        if not self.kinks:
            object.__setattr__(self, "kinks", tuple(() for _ in self.functions))

    def __len__(self) -> int:
        return len(self.functions)

    def matrix(self, xs) -> np.ndarray:
        """Entry (i, j) = phi_i(x_j)."""
        xs = np.asarray(xs, dtype=float)
        return np.vstack([np.broadcast_to(np.asarray(f(xs), dtype=float), xs.shape)
                          for f in self.functions])


def vandermonde_gm(n: int) -> FunctionTuple:
    if n < 2:
        raise ValueError("n must be >= 2")
    funcs = tuple((lambda x, k=k: np.asarray(x, float) ** k) for k in range(n))
    return FunctionTuple(funcs, tuple(f"x^{k}" for k in range(n)))


def build_kernel_matrix(density: Density, a_tuple, b_tuple) -> np.ndarray:
    """Entry (i, j) = f(a_i - b_j)."""
    return np.exp(log_kernel_matrix(density, a_tuple, b_tuple))


def log_kernel_matrix(density: Density, a_tuple, b_tuple) -> np.ndarray:
    a = np.asarray(list(a_tuple), dtype=float)
    b = np.asarray(list(b_tuple), dtype=float)
    if a.shape != b.shape:
        raise ValueError("a and b tuples must have the same length")
    return density.logpdf(a[:, None] - b[None, :])


def _adversarial(n: int, domain: tuple, gap: float, rng: np.random.Generator) -> list:
    lo, hi = domain
    width = hi - lo
    out = []
    centre = rng.uniform(lo + n * gap, hi - n * gap) if width > 2 * n * gap else 0.5 * (lo + hi)
    out.append(centre + gap * np.arange(n))                     # tight cluster
    out.append(np.linspace(lo, hi, n))                          # wide spread
    out.append(np.concatenate([[lo], hi - gap * np.arange(n - 1)[::-1]]))  # tail excursion
    out.append(np.concatenate([lo + gap * np.arange(n - 1), [hi]]))
    return [np.asarray(v, float) for v in out if np.all(np.diff(v) > 0)]


def _pf_domain(density: Density, sampling: Sampling) -> tuple:
    if sampling.domain is not None:
        return tuple(float(v) for v in sampling.domain)
    return density.central


def check_pf_n(density: Density, n: int, sampling: Sampling | None = None,
               tol: float = DET_TOLERANCE, stop_at_first: bool = False) -> DetCheckReport:
    """Sampled check that det(f(a_i - b_j)) >= 0 for ordered a and b.

    Kernel matrices are built and rescaled in log space, so deep-tail entries
    keep their relative magnitudes. A row or column that is entirely zero is
    a degenerate tuple (det 0, pass).
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    sampling = sampling or Sampling()
    domain = _pf_domain(density, sampling)
    a_tuples = sample_ordered_tuples(n, domain, sampling.count, sampling.seed, sampling.min_gap)
    b_tuples = sample_ordered_tuples(n, domain, sampling.count, sampling.seed + 7919,
                                     sampling.min_gap)
    pairs = [(a.as_array(), b.as_array()) for a, b in zip(a_tuples, b_tuples)]
    if sampling.adversarial:
        rng = np.random.default_rng(sampling.seed)
        adv = _adversarial(n, domain, sampling.min_gap, rng)
        pairs.extend((x, y) for x in adv for y in adv)
    agg = _Aggregate(tol)
    for a, b in pairs:
        logk = log_kernel_matrix(density, a, b)
        det = det_sign_scaled_log(logk)
        agg.add(det, {"a": a.tolist(), "b": b.tolist()}, _has_zero_line(logk == -np.inf))
        if stop_at_first and det.normalized_det < -tol:
            break
    return agg.report("pf_n", n, sampling.seed)


def _has_zero_line(zero: np.ndarray) -> bool:
    return bool(zero.all(axis=1).any() or zero.all(axis=0).any())


def kernel_det(density: Density, a_tuple, b_tuple) -> ScaledDet:
    return det_sign_scaled_log(log_kernel_matrix(density, a_tuple, b_tuple))


def check_gm_n(functions: FunctionTuple, x_tuples: Sequence, tol: float = DET_TOLERANCE,
               seed: int | None = None) -> DetCheckReport:
    n = len(functions)
    agg = _Aggregate(tol)
    for xt in x_tuples:
        xs = np.asarray(list(xt), dtype=float)
        if xs.size != n:
            raise ValueError("tuple length must equal the number of functions")
        mat = functions.matrix(xs)
        det = det_sign_scaled(mat)
        agg.add(det, {"x": xs.tolist()}, _has_zero_line(mat == 0.0))
    return agg.report("gm_n", n, seed)


class AndreiefResult(NamedTuple):
    lhs: float
    rhs: float
    rel_err: float
    capped: bool = False


def _gauss_nodes(interval, panels: int, order: int = 10):
    lo, hi = interval
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    wx = (half[:, None] * w[None, :]).ravel()
    return x, wx


def _cube_integral(function_matrix, n: int, interval, panels: int) -> float:
    x, w = _gauss_nodes(interval, panels)
    # table[i][j] = f_ij at every node
    table = np.array([[np.broadcast_to(np.asarray(function_matrix[i][j](x), float), x.shape)
                       for j in range(n)] for i in range(n)])
    m = x.size
    if n == 2:
        # row i uses variable x_i
        d = (table[0, 0][:, None] * table[1, 1][None, :]
             - table[0, 1][:, None] * table[1, 0][None, :])
        return float(w @ d @ w)
    total = 0.0
    for k in range(m):
        # fix x_1 at node k and integrate the 2x2 cofactor expansion over x_2, x_3
        r0 = table[0, :, k]
        c00 = table[1, 1][:, None] * table[2, 2][None, :] - table[1, 2][:, None] * table[2, 1][None, :]
        c01 = table[1, 0][:, None] * table[2, 2][None, :] - table[1, 2][:, None] * table[2, 0][None, :]
        c02 = table[1, 0][:, None] * table[2, 1][None, :] - table[1, 1][:, None] * table[2, 0][None, :]
        inner = r0[0] * c00 - r0[1] * c01 + r0[2] * c02
        total += w[k] * float(w @ inner @ w)
    return total


def andreief_check(function_matrix: Sequence[Sequence[Callable]], interval, n: int,
                   tol: float = 1e-10) -> AndreiefResult:
    """Compare det(int f_ij) with the n-fold integral of det(f_ij(x_i)).

    The left side uses adaptive Simpson per entry, the right side tensor
    Gauss-Legendre over interval^n refined by doubling the panel count until
    two levels agree.
    """
    if n not in (2, 3):
        raise ValueError("andreief_check supports n = 2 or 3")
    if len(function_matrix) != n or any(len(row) != n for row in function_matrix):
        raise ValueError("function matrix must be n x n")
    lo, hi = float(interval[0]), float(interval[1])
    capped = False
    entries = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            res = integrate(function_matrix[i][j], (lo, hi), abs_tol=1e-15, rel_tol=1e-13)
            entries[i, j] = res.value
            capped |= res.capped
    lhs = float(np.linalg.det(entries)) if n == 3 else float(
        entries[0, 0] * entries[1, 1] - entries[0, 1] * entries[1, 0])

    # determinants far below the Hadamard-type magnitude converge in absolute terms
    floor = 1e-4 * float(np.prod(np.abs(entries).max(axis=1)))
    max_panels = 64 if n == 2 else 8
    panels = 1
    prev = _cube_integral(function_matrix, n, (lo, hi), panels)
    while True:
        panels *= 2
        cur = _cube_integral(function_matrix, n, (lo, hi), panels)
        if abs(cur - prev) <= tol * max(abs(cur), floor) or abs(cur - prev) == 0.0:
            break
        if panels >= max_panels:
            capped = True
            break
        prev = cur
    rhs = float(cur)
    scale = max(abs(lhs), abs(rhs))
    rel = float(abs(lhs - rhs) / scale) if scale > 0 else 0.0
    return AndreiefResult(lhs, rhs, rel, capped)
