"""Per-pair utility functions and the alpha-fair outer utility.

Two families of per-pair utilities:

* LinearUtility — rate-weighted, phi(T) = T / rate, for deployments with
  live traffic measurements;
* ConcavePwl — increasing concave piecewise-linear fit of an empirical CDF
  of historical rates, for offline allocation.

A ConcavePwl with S segments is stored as S+1 breakpoints. Because it is
concave, its value anywhere equals the minimum over its S segment affine
functions (the first segment extends left of the first breakpoint, the
last extends right); the allocator relies on exactly that epigraph form.
All fitted slopes are kept at or above EPS_SLOPE so the allocation
objective strictly prefers larger circuits, and the fit constrains the
value at T=0 to at least EPS_FLOOR so the alpha >= 1 outer utility is
defined everywhere.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .errors import ParseError, SolverError, ValidationError
from .netmodel import TrafficDemandMatrix

__all__ = [
    "EPS_SLOPE",
    "EPS_FLOOR",
    "EPS_RATE",
    "AlphaFairness",
    "LinearUtility",
    "EmpiricalCdf",
    "ConcavePwl",
    "UtilityFamily",
    "alpha_utility",
    "realtime_utilities",
    "empirical_cdf",
    "fit_concave_pwl",
    "evaluate_utility",
    "save_utilities",
    "load_utilities",
]

EPS_SLOPE = 1e-6   # minimum utility slope, per Mb/s
EPS_FLOOR = 1e-6   # minimum utility value at T=0
EPS_RATE = 1e-3    # Mb/s floor for measured rates in real-time mode

_SLOPE_TOL = 1e-9  # slack when validating fitted slopes


def alpha_utility(f: float, alpha: float) -> float:
    """Alpha-fair utility: f^(1-alpha)/(1-alpha), or log f at alpha=1."""
    if alpha < 0:
        raise ValidationError("alpha must be >= 0")
    if f < 0 or (f == 0 and alpha >= 1):
        raise ValidationError(f"utility argument {f} outside domain for alpha={alpha}")
    if alpha == 1:
        return math.log(f)
    return f ** (1.0 - alpha) / (1.0 - alpha)


@dataclass(frozen=True)
class AlphaFairness:
    alpha: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValidationError("alpha must be >= 0")

    def utility(self, f: float) -> float:
        return alpha_utility(f, self.alpha)


@dataclass(frozen=True)
class LinearUtility:
    """phi(T) = T / rate; rate must be positive (floor idle pairs first)."""

    rate: float

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ValidationError("linear utility rate must be finite and > 0")

    def evaluate(self, demand: float) -> float:
        return demand / self.rate


def realtime_utilities(current_rates: TrafficDemandMatrix,
                       alpha: float = 2.0,
                       rate_floor: float = EPS_RATE) -> "UtilityFamily":
    """Linear utilities weighted by the measured rates; idle pairs get the
    rate floor so the allocation stays bounded and strictly increasing."""
    utilities = {}
    n = current_rates.n
    for k in range(n):
        for l in range(n):
            if k != l:
                r = max(current_rates.entries[k, l], rate_floor)
                utilities[(k, l)] = LinearUtility(rate=r)
    return UtilityFamily(alpha=alpha, utilities=utilities)


class EmpiricalCdf:
    """Right-continuous step CDF of historical rate samples."""

    def __init__(self, samples):
        arr = np.sort(np.asarray(samples, dtype=float))
        if arr.size == 0:
            raise ValidationError("empirical CDF needs at least one sample")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValidationError("samples must be finite and >= 0")
        self.samples = arr

    @property
    def count(self) -> int:
        return int(self.samples.size)

    def __call__(self, x):
        idx = np.searchsorted(self.samples, x, side="right")
        return idx / self.samples.size

    def median(self) -> float:
        return float(np.median(self.samples))


def empirical_cdf(samples) -> EmpiricalCdf:
    return EmpiricalCdf(samples)


@dataclass(frozen=True)
class ConcavePwl:
    """Increasing concave piecewise-linear utility.

    breakpoints: S+1 (x, y) knots for S segments, x strictly increasing,
    slopes nonincreasing and all >= EPS_SLOPE. tail_slope is the last
    segment's slope (the function grows at that rate beyond the last knot).
    """

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        bp = self.breakpoints
        if len(bp) < 2:
            raise ValidationError("PWL needs at least two breakpoints")
        xs = [x for x, _ in bp]
        ys = [y for _, y in bp]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValidationError("PWL x values must be strictly increasing")
        if xs[0] < 0:
            raise ValidationError("PWL domain starts below zero")
        slopes = self.slopes()
        if any(s < EPS_SLOPE - _SLOPE_TOL for s in slopes):
            raise ValidationError("PWL slope below the minimum slope")
        if any(b > a + _SLOPE_TOL for a, b in zip(slopes, slopes[1:])):
            raise ValidationError("PWL slopes must be nonincreasing (concavity)")
        if self.value_at_zero() < EPS_FLOOR - _SLOPE_TOL:
            raise ValidationError("PWL value at T=0 must be >= EPS_FLOOR")
        if any(y2 < y1 for y1, y2 in zip(ys, ys[1:])):
            raise ValidationError("PWL y values must be nondecreasing")

    def slopes(self) -> list[float]:
        bp = self.breakpoints
        return [(y2 - y1) / (x2 - x1)
                for (x1, y1), (x2, y2) in zip(bp, bp[1:])]

    @property
    def tail_slope(self) -> float:
        return self.slopes()[-1]

    def pieces(self) -> list[tuple[float, float]]:
        """Affine pieces (intercept, slope), one per segment; the function
        equals min over pieces for every T >= 0."""
        out = []
        for (x1, y1), (x2, y2) in zip(self.breakpoints, self.breakpoints[1:]):
            slope = (y2 - y1) / (x2 - x1)
            out.append((y1 - slope * x1, slope))
        return out

    def value_at_zero(self) -> float:
        (x1, y1), (x2, y2) = self.breakpoints[0], self.breakpoints[1]
        slope = (y2 - y1) / (x2 - x1)
        return y1 - slope * x1

    def evaluate(self, demand: float) -> float:
        if demand < 0:
            raise ValidationError("demand must be >= 0")
        val = min(a + b * demand for a, b in self.pieces())
        # the fit keeps the value at zero above the floor; clip only guards
        # against values loaded from elsewhere
        return max(val, EPS_FLOOR)


def _degenerate_pwl(value: float) -> ConcavePwl:
    """Fallback fit when the above-median sample set is a single point."""
    y_top = 1.0 - EPS_FLOOR
    if value <= 0:
        return ConcavePwl(breakpoints=((0.0, y_top),
                                       (1.0, y_top + EPS_SLOPE)))
    slope1 = (y_top - EPS_FLOOR) / value
    if slope1 < 2 * EPS_SLOPE:
        raise ValidationError(
            f"degenerate history value {value} too large for a valid PWL")
    return ConcavePwl(breakpoints=((0.0, EPS_FLOOR), (value, y_top),
                                   (value + 1.0, y_top + EPS_SLOPE)))


def fit_concave_pwl(cdf: EmpiricalCdf, segments: int = 3,
                    eps_slope: float = EPS_SLOPE,
                    eps_floor: float = EPS_FLOOR) -> ConcavePwl:
    """Least-squares increasing concave PWL fit of the empirical CDF points
    at or above the median rate.

    Knot x positions are fixed at equal-count quantiles of the above-median
    sample values; knot y values solve a small QP with concavity, minimum
    slope, and value-at-zero constraints. Points below the median never
    enter the fit.
    """
    if segments < 1:
        raise ValidationError("segments must be >= 1")
    med = cdf.median()
    xs = cdf.samples[cdf.samples >= med]
    ys = cdf(xs)
    distinct = np.unique(xs)
    if distinct.size < 2:
        return _degenerate_pwl(float(distinct[0]))

    nseg = min(segments, distinct.size - 1)
    knots = np.quantile(distinct, np.linspace(0.0, 1.0, nseg + 1))
    knots = np.unique(knots)
    while knots.size < 2:
        knots = np.array([distinct[0], distinct[-1]])
    nseg = knots.size - 1

    # interpolation matrix: row i gives y-hat(xs[i]) as a combination of
    # the knot values
    H = np.zeros((xs.size, knots.size))
    seg_idx = np.clip(np.searchsorted(knots, xs, side="right") - 1, 0, nseg - 1)
    for i, (x, s) in enumerate(zip(xs, seg_idx)):
        x1, x2 = knots[s], knots[s + 1]
        w = (x - x1) / (x2 - x1)
        H[i, s] = 1.0 - w
        H[i, s + 1] = w

    v = cp.Variable(knots.size)
    widths = np.diff(knots)
    slopes = cp.multiply(1.0 / widths, cp.diff(v))
    constraints = [slopes >= eps_slope]
    if nseg > 1:
        constraints.append(cp.diff(slopes) <= 0)
    # first segment extended to x=0 stays above the utility floor, so the
    # concave min-of-pieces form is valid on all of [0, inf)
    constraints.append(v[0] - slopes[0] * knots[0] >= eps_floor)
    problem = cp.Problem(cp.Minimize(cp.sum_squares(H @ v - ys)), constraints)
    try:
        problem.solve(solver=cp.CLARABEL)
    except cp.SolverError as exc:
        raise SolverError(f"PWL fit failed: {exc}") from exc
    if problem.status not in ("optimal", "optimal_inaccurate") or v.value is None:
        raise SolverError(f"PWL fit failed with status {problem.status}")

    vals = np.asarray(v.value, dtype=float)
    # round away solver dust that would violate the invariants
    for s in range(nseg):
        lo = vals[s] + eps_slope * widths[s]
        if vals[s + 1] < lo:
            vals[s + 1] = lo
    prev = None
    for s in range(nseg):
        slope = (vals[s + 1] - vals[s]) / widths[s]
        if prev is not None and slope > prev:
            vals[s + 1] = vals[s] + prev * widths[s]
        prev = (vals[s + 1] - vals[s]) / widths[s]
    first_slope = (vals[1] - vals[0]) / widths[0]
    floor_gap = eps_floor - (vals[0] - first_slope * knots[0])
    if floor_gap > 0:
        vals += floor_gap
    return ConcavePwl(breakpoints=tuple(zip(knots.tolist(), vals.tolist())))


@dataclass(frozen=True)
class UtilityFamily:
    """One utility per ordered IE pair plus the shared fairness exponent."""

    alpha: float
    utilities: dict

    def __post_init__(self):
        if self.alpha < 0:
            raise ValidationError("alpha must be >= 0")
        for (k, l) in self.utilities:
            if k == l:
                raise ValidationError("diagonal pairs carry no utility")

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self.utilities)

    def covers(self, n: int) -> bool:
        want = {(k, l) for k in range(n) for l in range(n) if k != l}
        return set(self.utilities) == want

    def phi(self, pair: tuple[int, int], demand: float) -> float:
        return self.utilities[pair].evaluate(demand)


def evaluate_utility(family: UtilityFamily, pair: tuple[int, int],
                     demand: float) -> tuple[float, float]:
    """Composition (phi(T), U(phi(T))) for one IE pair."""
    phi = family.phi(pair, demand)
    return phi, alpha_utility(phi, family.alpha)


def save_utilities(family: UtilityFamily, path: str | os.PathLike) -> None:
    """Text format: header `alpha <a>`, then one line per pair:
    `util <k> <l> linear <rate>` or `util <k> <l> pwl <x1> <y1> ...`
    (1-based node indices)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"alpha {family.alpha:.17g}\n")
        for (k, l) in family.pairs():
            u = family.utilities[(k, l)]
            if isinstance(u, LinearUtility):
                fh.write(f"util {k + 1} {l + 1} linear {u.rate:.17g}\n")
            else:
                flat = " ".join(f"{x:.17g} {y:.17g}" for x, y in u.breakpoints)
                fh.write(f"util {k + 1} {l + 1} pwl {flat}\n")


def load_utilities(path: str | os.PathLike) -> UtilityFamily:
    alpha = None
    utilities = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "alpha":
                if len(parts) != 2:
                    raise ParseError(path, line_no, "expected `alpha <value>`")
                alpha = float(parts[1])
                continue
            if parts[0] != "util" or len(parts) < 5:
                raise ParseError(path, line_no, "expected `util <k> <l> <kind> ...`")
            try:
                k, l = int(parts[1]) - 1, int(parts[2]) - 1
            except ValueError:
                raise ParseError(path, line_no, "bad pair indices")
            kind = parts[3]
            try:
                if kind == "linear":
                    utilities[(k, l)] = LinearUtility(rate=float(parts[4]))
                elif kind == "pwl":
                    nums = [float(tok) for tok in parts[4:]]
                    if len(nums) % 2 or len(nums) < 4:
                        raise ParseError(path, line_no,
                                         "pwl needs an even number of >= 4 values")
                    bp = tuple(zip(nums[0::2], nums[1::2]))
                    utilities[(k, l)] = ConcavePwl(breakpoints=bp)
                else:
                    raise ParseError(path, line_no, f"unknown utility kind {kind!r}")
            except ValidationError as exc:
                raise ParseError(path, line_no, str(exc)) from exc
    if alpha is None:
        raise ParseError(path, 0, "missing `alpha` header")
    return UtilityFamily(alpha=alpha, utilities=utilities)
