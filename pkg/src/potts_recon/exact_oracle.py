"""Exact finitely-supported laws of the root posterior.

The law of ``(f_n(1, sigma^r(n)), ..., f_n(q, sigma^r(n)))`` is carried as a
weighted list of posterior vectors (atoms). One tree level is produced by
multiplying the child factors ``1 + lam*q*(y - 1/q)`` in one child at a
time, renormalising and merging coincident vectors after every child.

Conditioned on root spin 1 the law is invariant under permutations of spins
2..q, so internally atoms are stored with coordinates 2..q sorted
(one atom per orbit). The full law is recovered by spreading each orbit
uniformly over its arrangements. The deepest requested level is never
materialised; its moments come from a streaming sweep over
(state after d-1 children) x (last child).
"""
from __future__ import annotations

import csv
import functools
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._oracle_kernels import final_level_sums
from .channel import ChannelParams, ks_regime, transition_matrix
from .errors import AtomBudgetExceeded, DegenerateNormalization, InvalidParameters
from .report import Report, equality, inequality

MERGE_TOL = 1e-12
ATOM_BUDGET = 5_000_000
IDENTITY_TOL = 1e-12
_SIMPLEX_TOL = 1e-12


def as_posterior(v, q=None) -> np.ndarray:
    """Validate a point of the q-simplex and return it as a float array."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or (q is not None and v.shape[0] != q):
        raise InvalidParameters(f"expected a length-{q} vector, got shape {v.shape}")
    if np.any(v < -_SIMPLEX_TOL) or abs(v.sum() - 1.0) > _SIMPLEX_TOL:
        raise InvalidParameters("posterior vector must be non-negative and sum to 1")
    return v


def child_factors(params: ChannelParams, Y) -> np.ndarray:
    """Per-child factors ``1 + lam*q*(y_i - 1/q)``; rows of ``Y`` are children."""
    q, lam = params.q, params.lam
    return (1.0 - lam) + lam * q * np.asarray(Y, dtype=float)


def posterior_recursion(params: ChannelParams, children) -> np.ndarray:
    """Root posterior from the posteriors of its d children."""
    Y = np.asarray(children, dtype=float)
    if Y.shape != (params.d, params.q):
        raise InvalidParameters(
            f"expected {params.d} child vectors of length {params.q}, got {Y.shape}")
    for row in Y:
        as_posterior(row)
    prod = np.prod(child_factors(params, Y), axis=0)
    total = prod.sum()
    if total <= 0.0:
        raise DegenerateNormalization("all posterior factors vanished")
    return prod / total


@dataclass
class AtomDistribution:
    """Law of the posterior vector given root spin ``root_spin`` (1-based)."""

    vectors: np.ndarray
    weights: np.ndarray
    root_spin: int = 1

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.vectors.shape[0] != self.weights.shape[0]:
            raise InvalidParameters("one weight per atom required")
        if not 1 <= self.root_spin <= self.q:
            raise InvalidParameters(f"root spin {self.root_spin} outside 1..{self.q}")

    @property
    def q(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    @classmethod
    def level0(cls, q, root_spin=1):
        v = np.zeros((1, q))
        v[0, root_spin - 1] = 1.0
        return cls(v, np.ones(1), root_spin)

    def relabel(self, perm) -> "AtomDistribution":
        """Apply a spin relabelling; ``perm[i]`` is the new 0-based label of spin i."""
        perm = np.asarray(perm)
        V = np.empty_like(self.vectors)
        V[:, perm] = self.vectors
        return AtomDistribution(V, self.weights.copy(), int(perm[self.root_spin - 1]) + 1)

    def swapped_to_root(self, r) -> "AtomDistribution":
        perm = np.arange(self.q)
        a, b = self.root_spin - 1, r - 1
        perm[a], perm[b] = b, a
        return self.relabel(perm)

    def expect(self, fn):
        return float(np.dot(self.weights, fn(self.vectors)))


@dataclass(frozen=True)
class MomentRecord:
    n: int
    x_n: float
    z_n: float
    p_n: float


@dataclass(frozen=True)
class LevelStats:
    """First and second moments of the root-1 posterior law at one level."""

    n: int
    mean: np.ndarray = field(repr=False)       # E v
    second: np.ndarray = field(repr=False)     # E v v^T
    p_max: float                               # E max_i v_i
    total_weight: float

    @property
    def q(self):
        return self.mean.shape[0]

    @property
    def x(self):
        return float(self.mean[0] - 1.0 / self.q)

    @property
    def z(self):
        q = self.q
        return float(self.second[0, 0] - 2.0 * self.mean[0] / q + 1.0 / q**2)

    def record(self) -> MomentRecord:
        return MomentRecord(self.n, self.x, self.z, self.p_max)


# --------------------------------------------------------------------------
# canonical orbit machinery


def _canonical(V):
    out = V.copy()
    out[:, 1:] = -np.sort(-V[:, 1:], axis=1)
    return out


def _group(keys):
    """Group identical integer rows; returns (first index per group, inverse)."""
    n, q = keys.shape
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(0x5EED)
    mult = rng.integers(1, 2**62, size=q, dtype=np.int64) | 1
    with np.errstate(over="ignore"):
        h = (keys * mult).sum(axis=1)
    _, first, inv = np.unique(h, return_index=True, return_inverse=True)
    inv = inv.ravel()
    if np.array_equal(keys[first][inv], keys):
        return first, inv
    # hash collision between distinct rows
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return first, inv.ravel()


def merge_atoms(V, W, tol=MERGE_TOL):
    """Merge atoms whose vectors agree to within ``tol`` in max-norm.

    Two quantisation passes with grids offset by half a cell catch pairs that
    straddle a cell boundary in the first pass.
    """
    keep = W > 0
    V, W = V[keep], W[keep]
    for offset in (0.0, 0.5):
        keys = np.floor(V / tol + offset).astype(np.int64)
        first, inv = _group(keys)
        W = np.bincount(inv, weights=W, minlength=first.size)
        V = V[first]
    return V, W


def _normalise(U, W):
    tot = U.sum(axis=1)
    bad = (tot <= 0.0) & (W > 0)
    if np.any(bad):
        raise DegenerateNormalization(
            f"{int(bad.sum())} configuration(s) with positive weight have zero posterior mass")
    live = W > 0
    return U[live] / tot[live, None], W[live]


def _expand_tails(V, W):
    """Spread canonical root-1 atoms over every arrangement of spins 2..q."""
    q = V.shape[1]
    perms = list(itertools.permutations(range(1, q)))
    outV = np.empty((len(perms) * V.shape[0], q))
    outW = np.empty(len(perms) * V.shape[0])
    k = V.shape[0]
    for t, perm in enumerate(perms):
        block = outV[t * k:(t + 1) * k]
        block[:, 0] = V[:, 0]
        block[:, list(perm)] = V[:, 1:]
        outW[t * k:(t + 1) * k] = W / len(perms)
    return merge_atoms(outV, outW)


def _child_law(params, V, W, budget):
    """Full law of one child's posterior vector given the root is spin 1.

    The child has spin c with probability M[1, c]; its own conditioned law is
    the root-1 law with coordinates 1 and c exchanged.
    """
    q = params.q
    M0 = transition_matrix(params)[0]
    n_perm = math.factorial(q)
    if n_perm * V.shape[0] > budget:
        raise AtomBudgetExceeded(n_perm * V.shape[0], budget)
    per_tail = math.factorial(q - 1)
    outV = np.empty((n_perm * V.shape[0], q))
    outW = np.empty(n_perm * V.shape[0])
    k = V.shape[0]
    for t, pos in enumerate(itertools.permutations(range(q))):
        block = outV[t * k:(t + 1) * k]
        block[:, list(pos)] = V
        outW[t * k:(t + 1) * k] = W * (M0[pos[0]] / per_tail)
    return merge_atoms(outV, outW)


def _combine(P, Pw, F, Wf, budget, chunk=1_000_000):
    m, K = P.shape[0], F.shape[0]
    if m * K > budget:
        raise AtomBudgetExceeded(m * K, budget)
    outs_V, outs_W = [], []
    rows = max(1, chunk // K)
    for a in range(0, m, rows):
        U = (P[a:a + rows, None, :] * F[None, :, :]).reshape(-1, P.shape[1])
        Uw = (Pw[a:a + rows, None] * Wf[None, :]).ravel()
        U, Uw = _normalise(U, Uw)
        v, w = merge_atoms(_canonical(U), Uw)
        outs_V.append(v)
        outs_W.append(w)
    return merge_atoms(np.concatenate(outs_V), np.concatenate(outs_W))


def _stats_from_canonical(n, V, W) -> LevelStats:
    q = V.shape[1]
    tot = W.sum()
    m1 = float(W @ V[:, 0])
    s11 = float(W @ V[:, 0] ** 2)
    sq = float(W @ (V**2).sum(axis=1))
    pmax = float(W @ V.max(axis=1))
    return _symmetric_stats(n, q, tot, m1, s11, sq, pmax)


def _symmetric_stats(n, q, tot, m1, s11, sq, pmax) -> LevelStats:
    # exchangeability of spins 2..q fixes every entry from (m1, s11, sq)
    mean = np.full(q, (tot - m1) / (q - 1))
    mean[0] = m1
    S = np.empty((q, q))
    tail_sq = sq - s11
    S[0, 0] = s11
    S[0, 1:] = S[1:, 0] = (m1 - s11) / (q - 1)
    if q > 2:
        # E (sum_{i>1} v_i)^2 = E (1 - v1)^2
        cross = (tot - 2 * m1 + s11 - tail_sq) / ((q - 1) * (q - 2))
        S[1:, 1:] = cross
    np.fill_diagonal(S[1:, 1:], tail_sq / (q - 1))
    return LevelStats(n, mean, S, float(pmax), float(tot))


def stats_from_atoms(n, dist: AtomDistribution) -> LevelStats:
    """Moments computed entry by entry from a full (root-1) atom list."""
    if dist.root_spin != 1:
        dist = dist.swapped_to_root(1)
    V, W = dist.vectors, dist.weights
    mean = W @ V
    S = (V * W[:, None]).T @ V
    return LevelStats(n, mean, S, float(W @ V.max(axis=1)), float(W.sum()))


def _evolve_canonical(params, V, W, budget, stream=False):
    Y, Wy = _child_law(params, V, W, budget)
    F = child_factors(params, Y)
    P = np.full((1, params.q), 1.0 / params.q)
    Pw = np.ones(1)
    for k in range(params.d):
        if stream and k == params.d - 1:
            sums = final_level_sums(np.ascontiguousarray(P), Pw,
                                    np.ascontiguousarray(F.T), Wy)
            if not np.all(np.isfinite(sums)):
                raise DegenerateNormalization("non-finite posterior in final sweep")
            return sums
        P, Pw = _combine(P, Pw, F, Wy, budget)
    return P, Pw


@functools.lru_cache(maxsize=128)
def _canonical_laws(params: ChannelParams, n: int, budget: int):
    laws = [(np.eye(1, params.q), np.ones(1))]
    for _ in range(n):
        V, W = laws[-1]
        laws.append(_evolve_canonical(params, V, W, budget))
    return tuple(laws)


@functools.lru_cache(maxsize=256)
def _level_stats(params: ChannelParams, n: int, budget: int) -> tuple:
    if n == 0:
        return (_stats_from_canonical(0, np.eye(1, params.q), np.ones(1)),)
    laws = _canonical_laws(params, n - 1, budget)
    out = [_stats_from_canonical(k, V, W) for k, (V, W) in enumerate(laws)]
    V, W = laws[-1]
    tot, m1, s11, sq, pmax = _evolve_canonical(params, V, W, budget, stream=True)
    out.append(_symmetric_stats(n, params.q, tot, m1, s11, sq, pmax))
    return tuple(out)


def level_stats(params: ChannelParams, n: int, budget: int = ATOM_BUDGET):
    """Moment summaries for levels 0..n (the last level is streamed)."""
    if n < 0:
        raise InvalidParameters("n must be non-negative")
    return list(_level_stats(params, int(n), int(budget)))


def exact_law(params: ChannelParams, n: int, root_spin: int = 1,
              budget: int = ATOM_BUDGET) -> AtomDistribution:
    """Materialised level-n law (full vectors, not orbit representatives)."""
    V, W = _canonical_laws(params, int(n), int(budget))[-1]
    V, W = _expand_tails(V, W)
    dist = AtomDistribution(V, W, 1)
    return dist if root_spin == 1 else dist.swapped_to_root(root_spin)


def evolve_exact(params: ChannelParams, dist: AtomDistribution,
                 budget: int = ATOM_BUDGET) -> AtomDistribution:
    """Level-(n+1) law from the level-n law ``dist`` (same root spin)."""
    if dist.q != params.q:
        raise InvalidParameters("distribution and channel disagree on q")
    r = dist.root_spin
    base = dist if r == 1 else dist.swapped_to_root(1)
    V, W = merge_atoms(_canonical(base.vectors), base.weights)
    V, W = _evolve_canonical(params, V, W, budget)
    V, W = _expand_tails(V, W)
    out = AtomDistribution(V, W, 1)
    return out if r == 1 else out.swapped_to_root(r)


def exact_moments(params: ChannelParams, n: int, budget: int = ATOM_BUDGET):
    """``MomentRecord`` for levels 0..n."""
    return [s.record() for s in level_stats(params, n, budget)]


def mle_success_probability(dist: AtomDistribution, tie_tol=1e-12) -> float:
    """P(argmax estimator hits the root), ties split uniformly."""
    V = dist.vectors
    top = V.max(axis=1, keepdims=True)
    ties = V >= top - tie_tol
    hit = ties[:, dist.root_spin - 1] / ties.sum(axis=1)
    return float(dist.weights @ hit)


# --------------------------------------------------------------------------
# identity checks


def child_moments(params: ChannelParams, stats: LevelStats):
    """Mean vector and second-moment matrix of ``Y_j`` (one child's posterior).

    The child has spin c with probability M[1, c] and its vector is then the
    root-1 law with coordinates 1 and c exchanged.
    """
    q = params.q
    M0 = transition_matrix(params)[0]
    mean = np.zeros(q)
    second = np.zeros((q, q))
    for c in range(q):
        perm = np.arange(q)
        perm[0], perm[c] = c, 0
        mean += M0[c] * stats.mean[perm]
        second += M0[c] * stats.second[np.ix_(perm, perm)]
    return mean, second


def verify_change_of_measure(params: ChannelParams, n: int, tol=IDENTITY_TOL,
                             stats: LevelStats | None = None) -> Report:
    """First/second moment relations between X+, X- and the unconditioned X_i,
    plus the sandwich x_n <= p_n - 1/q <= sqrt(x_n)."""
    st = stats or level_stats(params, n)[-1]
    q = params.q
    m, S = st.mean, st.second
    x, z = st.x, st.z
    ex_plus = m[0]
    # E sum_i X_i^2 under the unconditioned law: average over root spins of a
    # permutation-invariant function, i.e. the trace of the root-1 matrix
    sum_sq = float(np.trace(S))
    ex_plus_sq, ex_minus_sq = S[0, 0], S[1, 1]
    ex_minus = m[1]
    central_plus = ex_plus_sq - 2 * ex_plus / q + 1 / q**2
    central_minus = ex_minus_sq - 2 * ex_minus / q + 1 / q**2
    central_sum = sum_sq - 2.0 / q * float(m.sum()) + 1.0 / q
    checks = [
        equality("E X+ = E sum_i X_i^2", ex_plus, sum_sq, tol),
        equality("E sum_i X_i^2 = E(X+)^2 + (q-1) E(X-)^2", sum_sq,
                 ex_plus_sq + (q - 1) * ex_minus_sq, tol),
        equality("x_n = E sum_i (X_i - 1/q)^2", x, central_sum, tol),
        equality("x_n = E(X+ - 1/q)^2 + (q-1) E(X- - 1/q)^2", x,
                 central_plus + (q - 1) * central_minus, tol),
        inequality("z_n <= x_n", z, x, tol),
        inequality("0 <= z_n", 0.0, z, tol),
        inequality("x_n <= p_n - 1/q", x, st.p_max - 1 / q, tol),
        inequality("p_n - 1/q <= sqrt(x_n)", st.p_max - 1 / q, math.sqrt(max(x, 0.0)), tol),
    ]
    return Report("change_of_measure", checks,
                  {"q": q, "d": params.d, "lambda": params.lam, "n": n,
                   "x_n": x, "z_n": z, "p_n": st.p_max})


def verify_y_identities(params: ChannelParams, n: int, tol=IDENTITY_TOL,
                        stats: LevelStats | None = None) -> Report:
    """Means and covariances of the child posteriors Y_ij(n) against x_n, z_n."""
    st = stats or level_stats(params, n)[-1]
    q, lam = params.q, params.lam
    x, z = st.x, st.z
    mean, second = child_moments(params, st)
    dev = mean - 1.0 / q
    cov = second - np.add.outer(mean, mean) / q + 1.0 / q**2
    checks = [
        equality("E(Y_1 - 1/q) = lam x_n", dev[0], lam * x, tol),
        equality("E(Y_1 - 1/q)^2 = lam z_n + (1-lam) x_n / q", cov[0, 0],
                 lam * z + (1 - lam) * x / q, tol),
    ]
    for i in range(1, q):
        checks.append(equality(f"E(Y_{i+1} - 1/q) = -lam x_n/(q-1)", dev[i],
                               -lam * x / (q - 1), tol))
        checks.append(equality(
            f"E(Y_{i+1} - 1/q)^2 = (1 + lam/(q-1)) x_n/q - lam z_n/(q-1)", cov[i, i],
            (1 + lam / (q - 1)) * x / q - lam * z / (q - 1), tol))
        checks.append(equality(
            f"E(Y_1 - 1/q)(Y_{i+1} - 1/q) = -lam z_n/(q-1) - (1-lam) x_n/(q(q-1))",
            cov[0, i], -lam * z / (q - 1) - (1 - lam) * x / (q * (q - 1)), tol))
    if q > 2:
        rhs = (2 * lam * z - (q - 2 + 2 * lam) * x / q) / ((q - 1) * (q - 2))
        for i1 in range(1, q):
            for i2 in range(i1 + 1, q):
                checks.append(equality(
                    f"E(Y_{i1+1} - 1/q)(Y_{i2+1} - 1/q) = [2 lam z_n - (q-2+2lam) x_n/q]"
                    "/((q-1)(q-2))", cov[i1, i2], rhs, tol))
    return Report("y_identities", checks,
                  {"q": q, "d": params.d, "lambda": lam, "n": n, "x_n": x, "z_n": z})


def expansion_residuals(params: ChannelParams, x_n: float, x_next: float):
    q, d, lam = params.q, params.d, params.lam
    r1 = x_next - d * lam**2 * x_n
    r2 = r1 - q * (q - 4) / (q - 1) * d * (d - 1) / 2 * lam**4 * x_n**2
    return r1, r2


def verify_expansion(params: ChannelParams, n: int, C: float | None = None) -> Report:
    """Residuals of the first- and second-order expansions of x_{n+1} in x_n."""
    q = params.q
    C = 10.0 * q**3 if C is None else C
    recs = exact_moments(params, n + 1)
    x_n, x_next = recs[n].x_n, recs[n + 1].x_n
    r1, r2 = expansion_residuals(params, x_n, x_next)
    checks = [inequality("|r1| <= C x_n^2", abs(r1), C * x_n**2),
              inequality("|r2| <= C x_n^3", abs(r2), C * x_n**3)]
    return Report("expansion", checks,
                  {"q": q, "d": params.d, "lambda": params.lam, "n": n, "x_n": x_n,
                   "x_next": x_next, "r1": r1, "r2": r2, "C": C,
                   "ks_regime": ks_regime(params).value})


def moments_csv(records, fh=None) -> str:
    buf = fh if fh is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "x_n", "z_n", "p_n"])
    for r in records:
        w.writerow([r.n, repr(r.x_n), repr(r.z_n), repr(r.p_n)])
    return buf.getvalue() if fh is None else ""
