"""Population dynamics for the root posterior law at large depth and degree.

A pool of samples stands in for the law of the posterior vector given that
the root has spin 1. Each level rebuilds the whole pool: every new sample
draws d child spins from the first row of the transition matrix, picks a
child posterior from the previous pool (with replacement), relabels it so the
child's own spin sits in coordinate 1 and multiplies the factors together.
Spins 2..q of each new sample are then shuffled uniformly at random.

The pool can be split into independent batches that only resample within
themselves. Batch means are then independent replicates, which gives honest
standard errors that include the noise inherited from earlier levels. A batch
must hold many more samples than d, otherwise children of one parent overlap
and the batch law drifts (x is biased low); ``auto_batches`` keeps at least
BATCH_PER_CHILD * d samples per batch and falls back to a single pool with
the plain sample standard error when that is impossible.

Random numbers come from Philox streams keyed by (seed, level, block) with a
fixed block size, so the output does not depend on how blocks are scheduled
across threads.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._population_kernels import batch_moments, evolve_block
from .channel import ChannelParams, transition_matrix
from .errors import BracketNotFound, DegenerateNormalization, InvalidParameters
from .report import Report, inequality

BLOCK = 1024
MIN_POOL = 10_000
DEFAULT_BATCHES = 50
BATCH_PER_CHILD = 200

# verdict rule constants
NONRECON_RUN = 20
NONRECON_SE = 5.0
NONRECON_FLOOR = 1e-4
PLATEAU_WINDOW = 50
PLATEAU_RTOL = 0.02
PLATEAU_SE = 10.0


class Verdict(str, enum.Enum):
    RECONSTRUCTION = "reconstruction"
    NON_RECONSTRUCTION = "non_reconstruction"
    UNDECIDED = "undecided"


@dataclass
class PopulationPool:
    """Samples of the posterior vector given root spin 1."""

    samples: np.ndarray
    level: int
    rng_seed: int
    n_batches: int = DEFAULT_BATCHES
    root_spin: int = 1

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=float)
        n = self.samples.shape[0]
        if self.n_batches < 1 or n % self.n_batches:
            raise InvalidParameters(
                f"pool size {n} must be a multiple of the batch count {self.n_batches}")

    @classmethod
    def level0(cls, q, pool_size, seed, n_batches=DEFAULT_BATCHES):
        s = np.zeros((pool_size, q))
        s[:, 0] = 1.0
        return cls(s, 0, int(seed), n_batches)

    @property
    def size(self):
        return self.samples.shape[0]

    @property
    def q(self):
        return self.samples.shape[1]

    def moments(self):
        """(x, se_x, z, se_z, p) with standard errors from batch means."""
        if self.n_batches == 1:
            # plain sample standard error; blind to noise from earlier levels
            v1 = self.samples[:, 0] - 1.0 / self.q
            cols = np.stack([v1, v1 * v1, self.samples.max(axis=1)], axis=1)
            sums = batch_moments(self.samples, 1)
            mean = sums[0] / self.size
            se = cols.std(axis=0, ddof=1) / math.sqrt(self.size)
        else:
            sums = batch_moments(self.samples, self.n_batches)
            bm = sums / (self.size // self.n_batches)
            mean = bm.mean(axis=0)
            se = bm.std(axis=0, ddof=1) / math.sqrt(self.n_batches)
        return float(mean[0]), float(se[0]), float(mean[1]), float(se[1]), float(mean[2])


def auto_batches(pool_size, d, max_batches=DEFAULT_BATCHES):
    """Largest divisor of pool_size not above max_batches keeping batches >= 200 d."""
    cap = max(1, min(max_batches, pool_size // (BATCH_PER_CHILD * d)))
    for r in range(cap, 0, -1):
        if pool_size % r == 0:
            return r
    return 1


def _spin_thresholds(params):
    cdf = np.cumsum(transition_matrix(params)[0])
    thr = np.minimum(np.rint(cdf * 2.0**32), 2.0**32).astype(np.uint64)
    return thr[:-1].copy()


def _block_raw(seed, level, block, n):
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), level, block])
    return np.random.Philox(ss).random_raw(n)


def evolve_pool(params: ChannelParams, pool: PopulationPool,
                threads: int = 1) -> PopulationPool:
    """Next-level pool; bitwise independent of ``threads``."""
    if pool.q != params.q:
        raise InvalidParameters("pool and channel disagree on q")
    n, d = pool.size, params.d
    prev = pool.samples
    out = np.empty_like(prev)
    thr = _spin_thresholds(params)
    a, lq = 1.0 - params.lam, params.lam * params.q
    level = pool.level + 1
    bs = n // pool.n_batches

    def run(block):
        start = block * BLOCK
        count = min(BLOCK, n - start)
        raw = _block_raw(pool.rng_seed, level, block, count * (d + params.q - 2))
        return evolve_block(prev, raw, start, count, d, bs, thr, a, lq, out)

    blocks = range((n + BLOCK - 1) // BLOCK)
    if threads <= 1:
        bad = sum(run(b) for b in blocks)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            bad = sum(ex.map(run, blocks))
    if bad:
        raise DegenerateNormalization(f"{bad} sample(s) had a vanishing posterior product")
    return PopulationPool(out, level, pool.rng_seed, pool.n_batches)


@dataclass(frozen=True)
class LevelRecord:
    n: int
    x: float
    se_x: float
    z: float
    se_z: float
    p: float


@dataclass
class TrajectoryEstimate:
    params: ChannelParams
    records: list
    verdict: Verdict
    seed: int
    pool_size: int
    max_levels: int
    n_batches: int = DEFAULT_BATCHES

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def config(self):
        return {**self.params.to_config(), "pool_size": self.pool_size,
                "max_levels": self.max_levels, "seed": self.seed,
                "n_batches": self.n_batches}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps({"schema": 1, "config": self.config(),
                                      "verdict": self.verdict.value}, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "x", "se_x", "z", "se_z", "p"])
        for r in self.records:
            w.writerow([r.n, repr(r.x), repr(r.se_x), repr(r.z), repr(r.se_z), repr(r.p)])
        return buf.getvalue()


def classify(records) -> Verdict:
    """Finite-run verdict from a list of level records (levels 1 onward count)."""
    run = 0
    for r in records[1:]:
        run = run + 1 if r.x < max(NONRECON_SE * r.se_x, NONRECON_FLOOR) else 0
        if run >= NONRECON_RUN:
            return Verdict.NON_RECONSTRUCTION
    if len(records) - 1 >= 2 * PLATEAU_WINDOW:
        xs = np.array([r.x for r in records[-2 * PLATEAU_WINDOW:]])
        prev, last = xs[:PLATEAU_WINDOW].mean(), xs[PLATEAU_WINDOW:].mean()
        se = records[-1].se_x
        if last > PLATEAU_SE * se and abs(last - prev) < PLATEAU_RTOL * abs(prev):
            return Verdict.RECONSTRUCTION
    return Verdict.UNDECIDED


def run_trajectory(params: ChannelParams, pool_size: int = 100_000, max_levels: int = 500,
                   seed: int = 0, *, n_batches: int | None = None, min_levels: int = 0,
                   early_stop: bool = True, threads: int = 1,
                   allow_small_pool: bool = False) -> TrajectoryEstimate:
    """Iterate the pool from level 0 and classify the run.

    With ``early_stop`` the run ends as soon as a verdict is reached and at
    least ``min_levels`` levels exist.
    """
    if pool_size < MIN_POOL and not allow_small_pool:
        raise InvalidParameters(f"pool_size must be at least {MIN_POOL}")
    if n_batches is None:
        n_batches = auto_batches(pool_size, params.d)
    pool = PopulationPool.level0(params.q, pool_size, seed, n_batches)
    records = [LevelRecord(0, *pool.moments())]
    verdict = Verdict.UNDECIDED
    run = 0
    for _ in range(max_levels):
        pool = evolve_pool(params, pool, threads)
        rec = LevelRecord(pool.level, *pool.moments())
        records.append(rec)
        if not early_stop or rec.n < min_levels:
            continue
        # cheap incremental form of the non-reconstruction rule
        run = run + 1 if rec.x < max(NONRECON_SE * rec.se_x, NONRECON_FLOOR) else 0
        if run >= NONRECON_RUN or len(records) > 2 * PLATEAU_WINDOW:
            verdict = classify(records)
            if verdict is not Verdict.UNDECIDED:
                break
    else:
        verdict = classify(records)
    return TrajectoryEstimate(params, records, verdict, int(seed), pool_size, max_levels,
                              n_batches)


@dataclass(frozen=True)
class Bracket:
    side: str
    lo: float
    hi: float
    d: int
    flags: tuple = ()
    history: tuple = field(default=(), repr=False)

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def scaled_mid(self):
        return math.sqrt(self.d) * self.mid

    def to_json(self, q):
        return {"schema": 1, "q": q, "d": self.d, "side": self.side, "lo": self.lo,
                "hi": self.hi, "scaled_mid": self.scaled_mid, "flags": list(self.flags),
                "history": [list(h) for h in self.history]}


@dataclass(frozen=True)
class ThresholdEstimate:
    q: int
    d: int
    plus: Bracket | None = None
    minus: Bracket | None = None
    config: dict = field(default_factory=dict)

    @property
    def lambda_plus_lo(self):
        return self.plus.lo if self.plus else None

    @property
    def lambda_plus_hi(self):
        return self.plus.hi if self.plus else None

    @property
    def lambda_minus_lo(self):
        return self.minus.lo if self.minus else None

    @property
    def lambda_minus_hi(self):
        return self.minus.hi if self.minus else None

    @property
    def scaled(self):
        return tuple(b.scaled_mid if b else None for b in (self.plus, self.minus))

    def to_json(self):
        out = [b.to_json(self.q) for b in (self.plus, self.minus) if b is not None]
        for rec in out:
            rec["config"] = self.config
        return out[0] if len(out) == 1 else out


def estimate_threshold(q: int, d: int, side: str = "ferro", tol: float = 1e-3,
                       pool_size: int = 20_000, seed: int = 0, *, max_levels: int = 500,
                       n_batches: int | None = None, threads: int = 1,
                       allow_small_pool: bool = False) -> ThresholdEstimate:
    """Bisect the reconstruction threshold on one side of zero.

    ``tol`` is the final bracket width in lambda. Every trajectory reuses the
    same seed, so neighbouring lambdas see common random numbers. Undecided
    runs are treated as reconstruction and recorded in ``flags``.
    """
    if side not in ("ferro", "antiferro"):
        raise InvalidParameters("side must be 'ferro' or 'antiferro'")
    if tol < 1e-3:
        raise InvalidParameters("tol must be at least 1e-3")
    sign = 1.0 if side == "ferro" else -1.0
    edge = 1.05 / math.sqrt(d)
    edge = min(edge, 1.0 / (q - 1)) if side == "antiferro" else min(edge, 0.999)
    flags = []
    history = []

    def recon(mag):
        params = ChannelParams(q, d, sign * mag)
        tr = run_trajectory(params, pool_size, max_levels, seed, n_batches=n_batches,
                            threads=threads, allow_small_pool=allow_small_pool)
        history.append((params.lam, tr.verdict.value, len(tr.records) - 1))
        if tr.verdict is Verdict.UNDECIDED:
            flags.append(f"undecided at lambda={params.lam:.6g}")
        return tr.verdict is not Verdict.NON_RECONSTRUCTION

    lo, hi = 0.0, edge
    if recon(lo) == recon(hi):
        raise BracketNotFound(
            f"same verdict at lambda=0 and lambda={sign * edge:.6g} ({side})")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if recon(mid):
            hi = mid
        else:
            lo = mid
    if sign > 0:
        br = Bracket(side, lo, hi, d, tuple(flags), tuple(history))
    else:
        br = Bracket(side, -hi, -lo, d, tuple(flags), tuple(history))
    cfg = {"q": q, "d": d, "side": side, "tol": tol, "pool_size": pool_size, "seed": seed,
           "max_levels": max_levels, "n_batches": n_batches}
    if sign > 0:
        return ThresholdEstimate(q, d, plus=br, config=cfg)
    return ThresholdEstimate(q, d, minus=br, config=cfg)


def check_zx_ratio(trajectory: TrajectoryEstimate, cutoff: float = 0.05, tol: float = 0.05,
                   resolve: float = 10.0) -> Report:
    """|z/x - 1/q| on levels with small but well-resolved x.

    A level qualifies when x < cutoff and x exceeds ``resolve`` standard
    errors; below that the ratio is dominated by sampling noise.
    """
    q = trajectory.params.q
    checks = []
    for r in trajectory.records:
        if r.n == 0 or not (resolve * r.se_x < r.x < cutoff):
            continue
        dev = abs(r.z / r.x - 1.0 / q)
        checks.append(inequality(f"|z/x - 1/q| <= {tol} at n={r.n}", dev, tol))
    return Report("zx_ratio", checks, {**trajectory.config(), "cutoff": cutoff,
                                       "qualifying_levels": len(checks)})
