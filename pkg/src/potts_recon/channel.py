"""Symmetric q-state Potts channel on the d-ary tree.

The second eigenvalue ``lambda`` is the canonical parameter. The flip
probability ``p`` and the inverse temperature ``beta`` are views of it:

    lambda = 1 - p q / (q - 1) = (e^beta - 1) / (e^beta + q - 1)
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameters

MAX_Q = 16
# slack for lambda = -1/(q-1) arriving through float arithmetic
_LOWER_SNAP = 1e-12


class KSRegime(str, enum.Enum):
    ABOVE = "above_KS"
    AT = "at_KS"
    BELOW = "below_KS"


def _check_q(q):
    if int(q) != q or not 2 <= q <= MAX_Q:
        raise InvalidParameters(f"q must be an integer in [2, {MAX_Q}], got {q!r}")


def lambda_of_p(q: int, p: float) -> float:
    _check_q(q)
    if not (0.0 < p <= 1.0):
        raise InvalidParameters(f"p must lie in (0, 1], got {p!r}")
    return 1.0 - p * q / (q - 1)


def p_of_lambda(q: int, lam: float) -> float:
    _check_q(q)
    return (1.0 - lam) * (q - 1) / q


def lambda_of_beta(q: int, beta: float) -> float:
    _check_q(q)
    if math.isnan(beta):
        raise InvalidParameters("beta is NaN")
    if beta == math.inf:
        return 1.0
    if beta == -math.inf:
        return -1.0 / (q - 1)
    if beta > 0:
        e = math.exp(-beta)
        return (1.0 - e) / (1.0 + (q - 1) * e)
    em1 = math.expm1(beta)
    return em1 / (em1 + q)


def beta_of_lambda(q: int, lam: float) -> float:
    _check_q(q)
    num = 1.0 + (q - 1) * lam
    if num <= 0.0:
        return -math.inf
    return math.log(num / (1.0 - lam))


@dataclass(frozen=True)
class ChannelParams:
    """Channel on the d-ary tree with ``q`` spins and second eigenvalue ``lam``."""

    q: int
    d: int
    lam: float

    def __post_init__(self):
        _check_q(self.q)
        if int(self.d) != self.d or self.d < 1:
            raise InvalidParameters(f"d must be a positive integer, got {self.d!r}")
        lam = float(self.lam)
        lo = -1.0 / (self.q - 1)
        if not math.isfinite(lam) or lam >= 1.0 or lam < lo - _LOWER_SNAP:
            raise InvalidParameters(
                f"lambda must lie in [{lo:.6g}, 1) for q={self.q}, got {lam!r}")
        if lam < lo:
            lam = lo
        object.__setattr__(self, "q", int(self.q))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "lam", lam)

    @classmethod
    def from_p(cls, q, d, p):
        return cls(q, d, lambda_of_p(q, p))

    @classmethod
    def from_beta(cls, q, d, beta):
        return cls(q, d, lambda_of_beta(q, beta))

    @classmethod
    def from_lambda_hat(cls, q, d, lambda_hat):
        return cls(q, d, lambda_hat / math.sqrt(d))

    @classmethod
    def from_config(cls, record: dict) -> "ChannelParams":
        """Build from ``{q, d}`` plus exactly one of lambda / p / beta / lambda_hat."""
        keys = [k for k in ("lambda", "p", "beta", "lambda_hat")
                if record.get(k) is not None]
        if len(keys) != 1:
            raise InvalidParameters(
                "exactly one of lambda, p, beta, lambda_hat must be given, "
                f"got {keys or 'none'}")
        q, d = int(record["q"]), int(record["d"])
        key = keys[0]
        value = float(record[key])
        if key == "lambda":
            return cls(q, d, value)
        if key == "p":
            return cls.from_p(q, d, value)
        if key == "beta":
            return cls.from_beta(q, d, value)
        return cls.from_lambda_hat(q, d, value)

    def to_config(self) -> dict:
        return {"q": self.q, "d": self.d, "lambda": self.lam}

    @property
    def p(self) -> float:
        return p_of_lambda(self.q, self.lam)

    @property
    def beta(self) -> float:
        return beta_of_lambda(self.q, self.lam)

    @property
    def lambda_hat(self) -> float:
        return self.lam * math.sqrt(self.d)

    @property
    def diagonal(self) -> float:
        """M_ii = 1 - p."""
        return (1.0 + (self.q - 1) * self.lam) / self.q

    @property
    def off_diagonal(self) -> float:
        """M_ij = p / (q - 1) for i != j."""
        return (1.0 - self.lam) / self.q

    @property
    def ferromagnetic(self) -> bool:
        return self.lam > 0

    @property
    def antiferromagnetic(self) -> bool:
        return self.lam < 0

    def with_lambda(self, lam) -> "ChannelParams":
        return ChannelParams(self.q, self.d, lam)


@dataclass(frozen=True)
class LambdaHat:
    """Degree-scaled eigenvalue ``lambda * sqrt(d)``; +-1 is the Kesten-Stigum bound."""

    value: float

    @classmethod
    def of(cls, params: ChannelParams) -> "LambdaHat":
        return cls(params.lambda_hat)

    def to_lambda(self, d: int) -> float:
        return self.value / math.sqrt(d)

    @property
    def in_studied_regime(self) -> bool:
        return abs(self.value) <= 1.0


def transition_matrix(params: ChannelParams) -> np.ndarray:
    q = params.q
    M = np.full((q, q), params.off_diagonal)
    np.fill_diagonal(M, params.diagonal)
    return M


def ks_regime(params: ChannelParams) -> KSRegime:
    """Sign of d*lambda^2 - 1, compared exactly on the computed product."""
    prod = params.d * params.lam * params.lam
    if prod > 1.0:
        return KSRegime.ABOVE
    if prod == 1.0:
        return KSRegime.AT
    return KSRegime.BELOW
