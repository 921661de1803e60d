"""Large-degree Gaussian limit of the posterior recursion.

As d grows with ``lambda_hat = lambda * sqrt(d)`` fixed, the log of the
unnormalised root posterior is Gaussian with mean ``s*mu`` and covariance
``s*Sigma``. One step of the recursion then becomes

    x_{n+1} ~ g_q(lambda_hat^2 x_n),  g_q(s) = E psi(s mu + sqrt(s) W) - 1/q

with ``psi`` the first softmax coordinate and ``W ~ N(0, Sigma)``.

Only differences ``W_i - W_1`` matter to ``psi``. They have mean
``-s q^2/(q-1)`` and covariance ``q^2/(q-1) (I + J)``, so g is a
(q-1)-dimensional Gaussian integral that is evaluated with tensor
Gauss-Hermite rules or Monte Carlo.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb
from numpy.polynomial.hermite_e import hermegauss
from scipy import optimize

from .channel import ChannelParams, transition_matrix
from .errors import InvalidParameters, PrecisionExhausted
from .report import Report, equality, inequality

GH_POINTS = 60
GH_MAX_NODES = 600_000
MC_SAMPLES = 10_000_000
MC_SIGMAS = 4.0
_MC_CHUNK = 250_000


class Method(str, enum.Enum):
    QUADRATURE = "quadrature"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class GaussianLimitSpec:
    """Mean vector and covariance of the limiting log-likelihood increments."""

    q: int

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 2:
            raise InvalidParameters(f"q must be an integer >= 2, got {self.q!r}")

    @property
    def mu(self) -> np.ndarray:
        q = self.q
        m = np.full(q, -q * (0.5 + 1.0 / (q - 1)))
        m[0] = q / 2.0
        return m

    @property
    def sigma(self) -> np.ndarray:
        q = self.q
        S = np.full((q, q), -q / (q - 1.0))
        np.fill_diagonal(S, float(q))
        return S

    @property
    def s_max(self) -> float:
        return (self.q - 1) / self.q

    @property
    def diff_mean(self) -> float:
        """Common mean of ``W_i - W_1`` per unit s, i >= 2."""
        return float(self.mu[1] - self.mu[0])

    @property
    def diff_cov(self) -> np.ndarray:
        """Covariance of ``(W_2 - W_1, ..., W_q - W_1)``."""
        q = self.q
        A = np.hstack([-np.ones((q - 1, 1)), np.eye(q - 1)])
        return A @ self.sigma @ A.T

    @property
    def diff_cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.diff_cov)


def psi(x) -> np.ndarray:
    """First softmax coordinate along the last axis."""
    x = np.asarray(x, dtype=float)
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e[..., 0] / e.sum(axis=-1)


def _check_s(spec, s):
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0) or np.any(s > spec.s_max + 1e-12):
        raise InvalidParameters(f"s must lie in [0, {spec.s_max:.6g}] for q={spec.q}")
    return s


def default_gh_points(q: int) -> int:
    """Nodes per dimension, capped so the tensor grid stays near GH_MAX_NODES."""
    cap = int(math.floor(GH_MAX_NODES ** (1.0 / (q - 1)) + 1e-9))
    return max(4, min(GH_POINTS, cap))


def _gh_rule(spec, n):
    z, w = hermegauss(n)
    w = w / math.sqrt(2 * math.pi)
    k = spec.q - 1
    Z = np.array(list(itertools.product(z, repeat=k))) if k > 1 else z[:, None]
    Wt = np.prod(np.array(list(itertools.product(w, repeat=k))), axis=1) if k > 1 else w
    D = Z @ spec.diff_cholesky.T
    return D, Wt


def _quad(spec, s, n):
    D, Wt = _gh_rule(spec, n)
    out = np.empty(s.shape)
    m = spec.diff_mean
    for idx, sv in enumerate(s):
        if sv == 0.0:
            out[idx] = 0.0
            continue
        expo = sv * m + math.sqrt(sv) * D
        # 1 / (1 + sum_i exp(.)) computed through a shifted log-sum-exp
        top = np.maximum(expo.max(axis=1), 0.0)
        denom = np.exp(-top) + np.exp(expo - top[:, None]).sum(axis=1)
        out[idx] = math.fsum(Wt * (np.exp(-top) / denom)) - 1.0 / spec.q
    return out


def _mc(spec, s, samples, seed):
    L = spec.diff_cholesky
    k = spec.q - 1
    out = np.empty(s.shape)
    err = np.empty(s.shape)
    m = spec.diff_mean
    for idx, sv in enumerate(s):
        if sv == 0.0:
            out[idx] = err[idx] = 0.0
            continue
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, idx])))
        sums, sq, count = 0.0, 0.0, 0
        remaining = samples // 2
        while remaining > 0:
            c = min(_MC_CHUNK, remaining)
            Z = rng.standard_normal((c, k)) @ L.T
            pair = np.empty(c)
            for sign in (1.0, -1.0):
                expo = sv * m + sign * math.sqrt(sv) * Z
                top = np.maximum(expo.max(axis=1), 0.0)
                val = np.exp(-top) / (np.exp(-top) + np.exp(expo - top[:, None]).sum(axis=1))
                pair = val if sign > 0 else 0.5 * (pair + val)
            sums += float(pair.sum())
            sq += float((pair * pair).sum())
            count += c
            remaining -= c
        mean = sums / count
        var = max(sq / count - mean * mean, 0.0)
        out[idx] = mean - 1.0 / spec.q
        err[idx] = MC_SIGMAS * math.sqrt(var / count)
    return out, err


def eval_g(q: int, s, method="quadrature", *, gh_points: int | None = None,
           samples: int = MC_SAMPLES, seed: int = 0):
    """``(g_q(s), err_bound)``; vectorised over ``s``.

    Quadrature error is estimated as the change against a rule with three
    quarters of the nodes. Monte Carlo reports four standard errors of the
    antithetic-pair mean.
    """
    spec = GaussianLimitSpec(q)
    scalar = np.ndim(s) == 0
    s = _check_s(spec, s)
    method = Method(method)
    if method is Method.QUADRATURE:
        n = gh_points or default_gh_points(q)
        val = _quad(spec, s, n)
        coarse = _quad(spec, s, max(2, int(math.ceil(0.75 * n))))
        err = np.abs(val - coarse) + 1e-15 * (s > 0)
    else:
        val, err = _mc(spec, s, int(samples), int(seed))
    if scalar:
        return float(val[0]), float(err[0])
    return val, err


def taylor_coefficients(q: int):
    """Analytic (c1, c2, c3) of g_q(s) = c1 s + c2 s^2 + c3 s^3 + O(s^4)."""
    c2 = 0.5 * q * (q - 4) / (q - 1)
    c3 = q * q * (q * q - 18 * q + 42) / (6.0 * (q - 1) ** 2)
    return 1.0, c2, c3


def taylor_check(q: int, s_grid=None, rel_tol: float = 0.10, abs_tol: float = 0.05,
                 **kw) -> Report:
    """Least-squares cubic through g_q on a small-s grid against the analytic series."""
    s = np.asarray(np.linspace(0.002, 0.02, 10) if s_grid is None else s_grid, dtype=float)
    if np.any(s <= 0) or np.any(s > 0.05):
        raise InvalidParameters("taylor grid must lie in (0, 0.05]")
    g, err = eval_g(q, s, **kw)
    A = np.stack([s, s**2, s**3], axis=1)
    fit, *_ = np.linalg.lstsq(A, g, rcond=None)
    smallest = float(np.min(np.abs(fit[2]) * s**3))
    if np.max(err) > 0.1 * smallest:
        raise PrecisionExhausted(
            f"g error bound {np.max(err):.3g} exceeds 10% of the cubic term {smallest:.3g}")
    c1, c2, c3 = taylor_coefficients(q)

    def coef_check(name, got, want):
        tol = abs_tol if want == 0 else rel_tol * abs(want)
        return equality(f"fitted {name} vs analytic", float(got), want, tol)

    checks = [equality("fitted c1 vs 1", float(fit[0]), c1, 1e-3),
              coef_check("c2", fit[1], c2)]
    return Report("taylor", checks,
                  {"q": q, "s_grid": s.tolist(), "fit": fit.tolist(),
                   "analytic": [c1, c2, c3], "c3_fit": float(fit[2]), "c3": c3,
                   "c3_rel_err": abs(fit[2] - c3) / abs(c3), "max_err_bound": float(err.max())})


def monotonicity_check(q: int, grid=None, **kw) -> Report:
    """g_q is non-decreasing along ``grid`` beyond the summed error bounds."""
    spec = GaussianLimitSpec(q)
    if grid is None:
        grid = np.arange(0.02, spec.s_max + 1e-12, 0.02)
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0) or np.any(grid > spec.s_max + 1e-12):
        raise InvalidParameters("grid must lie in (0, (q-1)/q]")
    g, err = eval_g(q, grid, **kw)
    g, err = np.atleast_1d(g), np.atleast_1d(err)
    checks = [inequality(f"g({grid[k]:.4g}) <= g({grid[k+1]:.4g})", g[k], g[k + 1],
                         err[k] + err[k + 1]) for k in range(len(grid) - 1)]
    return Report("monotonicity", checks, {"q": q, "grid": grid.tolist(), "g": g.tolist()})


@dataclass(frozen=True)
class GInterpolant:
    """Chebyshev interpolant of g_q on [0, (q-1)/q] with an s-dependent error."""

    q: int
    series: cheb.Chebyshev
    nodes: np.ndarray = field(repr=False)
    node_err: np.ndarray = field(repr=False)
    interp_err: float = 0.0

    def __call__(self, s):
        return self.series(s)

    def err(self, s):
        """Error envelope: running max of the node errors plus interpolation error."""
        return np.interp(s, self.nodes, self.node_err) + self.interp_err

    @property
    def max_err(self):
        return float(self.node_err.max() + self.interp_err)

    @classmethod
    def build(cls, q, degree=64, **kw):
        spec = GaussianLimitSpec(q)
        nodes = 0.5 * spec.s_max * (1 - np.cos(np.pi * (np.arange(degree + 1) + 0.5)
                                               / (degree + 1)))
        vals, errs = eval_g(q, nodes, **kw)
        series = cheb.Chebyshev.fit(nodes, vals, degree, domain=[0, spec.s_max])
        # fresh points between nodes measure the interpolation error directly
        probe = np.linspace(0.013, spec.s_max - 0.011, 17)
        pv, pe = eval_g(q, probe, **kw)
        interp = float(np.max(np.abs(series(probe) - pv)))
        order = np.argsort(nodes)
        env = np.maximum.accumulate(errs[order])
        return cls(q, series, nodes[order], env, interp + 1e-14)


@dataclass(frozen=True)
class FixedPointResult:
    q: int
    s_star: float | None
    w_star: float | None
    c_q: float | None
    s_root: float | None = None
    w_bracket: tuple | None = None
    s_bracket_width: float | None = None
    w_star_direct: float | None = None
    certificates: dict = field(default_factory=dict)

    def to_json(self):
        return {"schema": 1, "q": self.q, "s_star": self.s_star, "w_star": self.w_star,
                "c_q": self.c_q, "s_root": self.s_root,
                "w_bracket": list(self.w_bracket) if self.w_bracket else None,
                "s_bracket_width": self.s_bracket_width,
                "w_star_direct": self.w_star_direct, "certificates": self.certificates}


def _no_root_certificate(q, n_grid=200, **kw):
    spec = GaussianLimitSpec(q)
    grid = np.linspace(spec.s_max / n_grid, spec.s_max, n_grid)
    g, err = eval_g(q, grid, **kw)
    gap = g - grid + err
    return bool(np.all(gap < 0)), {"grid_points": n_grid, "max_g_minus_s_plus_err": float(gap.max()),
                                   "argmax_s": float(grid[int(np.argmax(gap))])}


def find_fixed_point(q: int, tol: float = 1e-3, s_tol: float = 1e-4, *, n_grid: int = 2000,
                     degree: int = 64, **kw) -> FixedPointResult:
    """Nonzero fixed point of g_q and the critical scaling w*.

    For q <= 4 the result carries a grid certificate that g_q(s) < s. For
    q >= 5, ``s_root`` solves g(s) = s, ``w_star`` is the infimum of w for which
    g(w s) >= s has a solution, found by bisection on a refined s-grid, and
    ``s_star`` is the touching point with g(w* s*) = s*.
    """
    if q < 3:
        raise InvalidParameters("q must be at least 3")
    if q <= 4:
        ok, cert = _no_root_certificate(q, **kw)
        if not ok:
            raise PrecisionExhausted(f"could not certify g_{q}(s) < s: {cert}")
        return FixedPointResult(q, None, None, None, certificates={"g_below_identity": cert})

    spec = GaussianLimitSpec(q)
    f = GInterpolant.build(q, degree, **kw)
    grid = np.linspace(spec.s_max / n_grid, spec.s_max, n_grid)

    # root of g(s) = s: last sign change of g(s) - s on the grid, polished
    h = f(grid) - grid
    sign_change = np.nonzero((h[:-1] > 0) & (h[1:] <= 0))[0]
    if sign_change.size == 0:
        raise PrecisionExhausted(f"no sign change of g_{q}(s) - s on the grid")
    k = sign_change[-1]
    direct = lambda s: eval_g(q, s, **kw)[0] - s  # noqa: E731
    s_root = optimize.brentq(direct, grid[k], grid[k + 1], xtol=s_tol / 10)

    def excess(w):
        # max over s of g(w s) - s with two local refinements around the best point
        vals = f(w * grid) - grid
        j = int(np.argmax(vals))
        best, s_best = vals[j], grid[j]
        lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, n_grid - 1)]
        for _ in range(2):
            fine = np.linspace(lo, hi, 201)
            fv = f(w * fine) - fine
            jj = int(np.argmax(fv))
            if fv[jj] > best:
                best, s_best = fv[jj], fine[jj]
            step = fine[1] - fine[0]
            lo, hi = fine[max(jj - 1, 0)], fine[min(jj + 1, 200)]
            lo, hi = max(lo, s_best - step), min(hi, s_best + step)
        return best, s_best

    w_lo, w_hi = 0.0, 1.0
    if excess(w_hi)[0] < 0:
        raise PrecisionExhausted("g(s) >= s has no solution at w = 1")
    while w_hi - w_lo > tol / 4:
        mid = 0.5 * (w_lo + w_hi)
        if excess(mid)[0] >= 0:
            w_hi = mid
        else:
            w_lo = mid
    # sign resolution at both ends against the local error of the interpolant
    def resolved(w, sign):
        e, sb = excess(w)
        return sign * e > f.err(w * sb)

    while not resolved(w_hi, 1) and w_hi < 1:
        w_hi = min(1.0, w_hi + tol / 8)
    while not resolved(w_lo, -1) and w_lo > 0:
        w_lo = max(0.0, w_lo - tol / 8)
    if w_hi - w_lo > tol:
        raise PrecisionExhausted(
            f"interpolant error {f.max_err:.2g} prevents resolving w* to {tol}")
    w_star = 0.5 * (w_lo + w_hi)

    # independent route: w* = 1 / max_t g(t)/t
    ratio = lambda t: -eval_g(q, t, **kw)[0] / t  # noqa: E731
    tg = np.linspace(0.01, spec.s_max, 40)
    gv, _ = eval_g(q, tg, **kw)
    t0 = tg[int(np.argmax(gv / tg))]
    res = optimize.minimize_scalar(ratio, bounds=(max(t0 - 0.02, 1e-3), t0 + 0.02),
                                   method="bounded", options={"xatol": 1e-6})
    w_direct = float(-1.0 / res.fun)
    t_m = float(res.x)
    s_star = float(t_m / w_direct)
    certs = {"interpolant_err": f.max_err, "excess_at_w_hi": float(excess(w_hi)[0]),
             "excess_at_w_lo": float(excess(w_lo)[0]), "t_max_ratio": t_m,
             "bisection_vs_direct": abs(w_star - w_direct)}
    return FixedPointResult(q, s_star, w_star, math.sqrt(w_star), s_root, (w_lo, w_hi),
                            s_tol, w_direct, certs)


def clt_consistency(params: ChannelParams, trajectory, tol: float = 0.02, **kw) -> Report:
    """max_n |x_{n+1} - g_q(lambda_hat^2 x_n)| along a population trajectory."""
    q = params.q
    lh2 = params.lambda_hat**2
    spec = GaussianLimitSpec(q)
    recs = trajectory.records
    xs = np.array([r.x for r in recs])
    se = np.array([r.se_x for r in recs])
    arg = np.clip(lh2 * xs[:-1], 0.0, spec.s_max)
    g, gerr = eval_g(q, arg, **kw)
    g, gerr = np.atleast_1d(g), np.atleast_1d(gerr)
    disc = np.abs(xs[1:] - g)
    # g has slope at most about 1 on the domain, so x-noise enters at most once
    bars = se[1:] + lh2 * se[:-1] + gerr
    j = int(np.argmax(disc)) if disc.size else 0
    checks = [inequality("max_n |x_{n+1} - g(lambda_hat^2 x_n)|",
                         float(disc.max()) if disc.size else 0.0, tol)]
    return Report("clt_consistency", checks,
                  {"q": q, "d": params.d, "lambda_hat_sq": lh2, "levels": len(recs) - 1,
                   "worst_level": j, "worst_error_bar": float(bars[j]) if disc.size else 0.0,
                   "discrepancy": disc.tolist()})


def verify_u_moments(params: ChannelParams, n: int, C: float | None = None) -> Report:
    """Moments of ``U_i = log(1 + lam q (Y_i - 1/q))`` for one child at level n.

    Residuals are compared with the envelope ``C d^{-1/2}``.
    """
    from .exact_oracle import exact_law, exact_moments

    q, d, lam = params.q, params.d, params.lam
    C = 10.0 * q**3 if C is None else C
    x = exact_moments(params, n)[-1].x_n
    dist = exact_law(params, n)
    M0 = transition_matrix(params)[0]
    # child law: spin c with probability M[1, c], coordinates 1 and c exchanged
    Vs, Ws = [], []
    for c in range(q):
        if M0[c] == 0:
            continue
        perm = np.arange(q)
        perm[0], perm[c] = c, 0
        Vs.append(dist.vectors[:, perm])
        Ws.append(dist.weights * M0[c])
    Y = np.concatenate(Vs)
    W = np.concatenate(Ws)
    with np.errstate(divide="ignore"):
        U = np.log(1.0 + lam * q * (Y - 1.0 / q))
    EU = W @ U
    with np.errstate(invalid="ignore"):
        cov = (U * W[:, None]).T @ U - np.outer(EU, EU)
    lh2qx = params.lambda_hat**2 * q * x
    env = C / math.sqrt(d)
    checks = [inequality("|d E U_1 - lambda_hat^2 q x_n / 2|", abs(d * EU[0] - 0.5 * lh2qx), env)]
    for i in range(1, q):
        checks.append(inequality(
            f"|d E U_{i+1} + (1/2 + 1/(q-1)) lambda_hat^2 q x_n|",
            abs(d * EU[i] + (0.5 + 1.0 / (q - 1)) * lh2qx), env))
    for i in range(q):
        checks.append(inequality(f"|d Var U_{i+1} - lambda_hat^2 q x_n|",
                                 abs(d * cov[i, i] - lh2qx), env))
    for i1 in range(q):
        for i2 in range(i1 + 1, q):
            checks.append(inequality(
                f"|d Cov(U_{i1+1}, U_{i2+1}) + lambda_hat^2 q x_n / (q-1)|",
                abs(d * cov[i1, i2] + lh2qx / (q - 1)), env))
    return Report("u_moments", checks,
                  {"q": q, "d": d, "lambda": lam, "n": n, "x_n": x, "C": C, "envelope": env,
                   "d_EU": (d * EU).tolist(), "d_cov": (d * cov).tolist(),
                   "lambda_hat_sq_q_x": lh2qx})
