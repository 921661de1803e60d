"""Computer-assisted bound showing g_3(s) < s on (0, 2/3].

For q = 3, g_3(s) + 1/3 is the Gaussian integral of
``1 / (1 + exp(-9s/2 + 3 sqrt(s) x) + exp(-9s/2 + (3/2) sqrt(s) x + (3 sqrt(3)/2) sqrt(s) y))``
against the standard normal density in (x, y). On [-5, 5]^2 the integral is
bounded above cell by cell on a 1/200 grid: the Gaussian density is bounded by
its value at the cell corner closest to the origin, and the reciprocal factor
by its value at the lower-left corner because both exponentials increase in x
and y. Outside the square the integrand is at most 1, so a Gaussian tail bound
covers the rest.

The grid of s values in [0.1, 2/3] plus a Lipschitz estimate covers that
interval. Small s are handled by a quartic polynomial bound whose sign is
checked in exact rational arithmetic.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import GridFailure
from .report import Report, equality, inequality

ROUNDING_BUDGET = 2e-12


@dataclass(frozen=True)
class GridProofConfig:
    cell_step: Fraction = Fraction(1, 200)
    index_lo: int = -1000
    index_hi: int = 999
    s_lo_milli: int = 100
    s_hi_milli: int = 667
    margin: Fraction = Fraction(5, 1000)
    tail_allowance: float = 1e-5
    lipschitz_bound: float = 3.0
    half_width: float = 5.0

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.index_lo, self.index_hi + 1)

    @property
    def s_grid(self) -> np.ndarray:
        return np.arange(self.s_lo_milli, self.s_hi_milli + 1) / 1000.0

    @property
    def spacing(self) -> float:
        return 1.0 / 1000.0

    def tiles_square(self) -> bool:
        lo = self.index_lo * self.cell_step
        hi = (self.index_hi + 1) * self.cell_step
        return lo == -self.half_width and hi == self.half_width


FAST_GRID = (0.1, 0.3, 0.5, 0.667)


def phi(i):
    """Index of the cell corner closest to the origin, in cell units."""
    return min(abs(i), abs(i + 1))


def _phi_vec(idx):
    return np.minimum(np.abs(idx), np.abs(idx + 1))


def psi_cell(i, j, s, step=1 / 200):
    """Upper bound on the integral of the integrand over cell (i, j)."""
    gauss = math.exp(-(phi(i) * step) ** 2 / 2 - (phi(j) * step) ** 2 / 2) * step * step
    rs = math.sqrt(s)
    denom = (1.0 + math.exp(-4.5 * s + 3 * rs * i * step)
             + math.exp(-4.5 * s + 1.5 * rs * i * step + 1.5 * math.sqrt(3) * rs * j * step))
    return gauss / (denom * 2 * math.pi)


def cell_bounds(s, cfg: GridProofConfig = GridProofConfig()) -> np.ndarray:
    """All cell bounds for one s as a (rows, cols) array indexed by (i, j)."""
    step = float(cfg.cell_step)
    idx = cfg.indices
    g = np.exp(-(_phi_vec(idx) * step) ** 2 / 2)
    rs = math.sqrt(s)
    x = idx * step
    a = np.exp(-4.5 * s + 3 * rs * x)
    b = np.exp(-4.5 * s + 1.5 * rs * x)
    c = np.exp(1.5 * math.sqrt(3) * rs * x)
    denom = 1.0 + a[:, None] + b[:, None] * c[None, :]
    return (g[:, None] * g[None, :]) * (step * step) / (denom * (2 * math.pi))


def tail_constant():
    """Gaussian mass outside [-5, 5]^2 is at most this, by the Mills ratio bound."""
    return 4 * math.exp(-12.5) / (5 * math.sqrt(2 * math.pi))


def g3_upper_bound(s, cfg: GridProofConfig = GridProofConfig(), *, naive=False):
    """Rigorous-by-construction upper bound on g_3(s) up to the rounding budget.

    The cell sum uses exact-rounding summation; the fixed rounding budget
    covers the error of the individual exponentials and products.
    """
    cells = cell_bounds(s, cfg)
    total = float(cells.sum()) if naive else math.fsum(cells.ravel())
    return -1.0 / 3.0 + cfg.tail_allowance + total + ROUNDING_BUDGET


def tail_check(cfg: GridProofConfig = GridProofConfig()) -> Report:
    t = tail_constant()
    return Report("tail_bound", [inequality("4 exp(-12.5) / (5 sqrt(2 pi)) <= tail allowance",
                                            t, cfg.tail_allowance)],
                  {"tail_constant": t, "tile_exact": cfg.tiles_square()})


@dataclass(frozen=True)
class GridResult:
    s: np.ndarray
    upper: np.ndarray

    @property
    def margins(self):
        return self.upper - self.s

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "upper_bound", "margin"])
        for s, u, m in zip(self.s, self.upper, self.margins):
            w.writerow([f"{s:.3f}", repr(float(u)), repr(float(m))])
        return buf.getvalue()


def evaluate_grid(points=None, cfg: GridProofConfig = GridProofConfig(),
                  progress=None) -> GridResult:
    pts = cfg.s_grid if points is None else np.asarray(points, dtype=float)
    up = np.empty(pts.shape)
    for k, s in enumerate(pts):
        up[k] = g3_upper_bound(float(s), cfg)
        if progress is not None:
            progress(k, float(s), up[k])
    return GridResult(pts, up)


def verify_grid(full: bool = True, points=None, cfg: GridProofConfig = GridProofConfig(),
                raise_on_failure: bool = False, progress=None):
    """Check g3_upper_bound(s) - s < -margin on the grid; returns (report, result).

    In full mode the Lipschitz step extends the grid statement to the whole
    interval [0.1, 2/3].
    """
    if points is None:
        points = cfg.s_grid if full else np.array(FAST_GRID)
    res = evaluate_grid(points, cfg, progress)
    margin = float(cfg.margin)
    m = res.margins
    checks = [inequality(f"g3 bound - s < -{margin} at s={s:.3f}", float(mm), -margin,
                         strict=True) for s, mm in zip(res.s, m)]
    failures = [float(s) for s, c in zip(res.s, checks) if not c.passed]
    info = {"mode": "full" if full else "fast", "points": len(res.s),
            "min_margin": float(m.min()), "max_margin": float(m.max()),
            "failures": failures[:10], "rounding_budget": ROUNDING_BUDGET}
    if full and np.array_equal(res.s, cfg.s_grid):
        # any s in [0.1, 2/3] is within one grid spacing of a grid point
        h = cfg.spacing
        L = cfg.lipschitz_bound
        worst = float(m.max())
        info["interval_bound"] = worst + (L + 1) * h
        info["residual_slack_vs_margin"] = margin - (L + 1) * h
        info["interval_bound_with_4_plus_1"] = worst + 5 * h
        checks.append(inequality("max margin + (L+1) h < 0 on [0.1, 2/3]",
                                 info["interval_bound"], 0.0, strict=True))
        checks.append(inequality("grid covers [0.1, 2/3] within one spacing",
                                 max(res.s.min() - 0.1, 2 / 3 - res.s.max()), h))
    report = Report("appendix_grid", checks, info)
    if raise_on_failure and failures:
        raise GridFailure(failures)
    return report, res


@dataclass(frozen=True)
class SmallSPolynomial:
    """Quartic h with g_3(s) - s <= s^2 h(s) / 1280 for small s."""

    coefficients: tuple = (-960, -1440, 58860, 98334, 595795)
    prefactor: Fraction = Fraction(1, 1280)

    def h(self, s):
        s = Fraction(s)
        return sum(Fraction(c) * s**k for k, c in enumerate(self.coefficients))

    def derivative(self, order=1):
        c = list(self.coefficients)
        for _ in range(order):
            c = [k * c[k] for k in range(1, len(c))]
        return tuple(c)

    def h2(self, s):
        s = Fraction(s)
        return sum(Fraction(c) * s**k for k, c in enumerate(self.derivative(2)))

    def bound(self, s):
        s = Fraction(s)
        return self.prefactor * s * s * self.h(s)


def small_s_check(poly: SmallSPolynomial = SmallSPolynomial(),
                  s_hi=Fraction(1, 10)) -> Report:
    """h < 0 on [0, 0.1] from convexity and negative endpoint values (exact)."""
    h2 = poly.derivative(2)
    h0, h1 = poly.h(0), poly.h(s_hi)
    checks = [
        equality("h(0) = -960", float(h0), -960.0, 0.0),
        inequality("h(0) < 0", float(h0), 0.0, strict=True),
        inequality("h(0.1) < 0", float(h1), 0.0, strict=True),
        equality("h''(0) = 117720", float(poly.h2(0)), 117720.0, 0.0),
        # every coefficient of h'' is positive, so h'' > 0 for s >= 0
        inequality("min coefficient of h'' > 0", 0.0, float(min(h2)), strict=True),
    ]
    return Report("small_s", checks,
                  {"h0": str(poly.h(0)), "h_0.1": str(poly.h(s_hi)),
                   "h_0.1_float": float(poly.h(s_hi)), "h2_coefficients": list(h2),
                   "conclusion": "g_3(s) < s on (0, 0.1]"})
