"""Small record types shared by the verification routines."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


@dataclass(frozen=True)
class Check:
    """One identity or inequality comparison."""

    identity: str
    lhs: float
    rhs: float
    abs_err: float
    passed: bool

    def to_json(self) -> dict:
        return {"identity": self.identity, "lhs": self.lhs, "rhs": self.rhs,
                "abs_err": self.abs_err, "pass": self.passed}


def equality(identity, lhs, rhs, tol) -> Check:
    err = abs(float(lhs) - float(rhs))
    return Check(identity, float(lhs), float(rhs), err, err <= tol)


def inequality(identity, lhs, rhs, slack=0.0, strict=False) -> Check:
    """Records ``lhs <= rhs`` (``<`` if strict); ``abs_err`` is the signed excess lhs - rhs."""
    lhs, rhs = float(lhs), float(rhs)
    ok = lhs < rhs + slack if strict else lhs <= rhs + slack
    return Check(identity, lhs, rhs, lhs - rhs, ok)


@dataclass
class Report:
    name: str
    checks: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_json(self) -> dict:
        return {"schema": 1, "name": self.name, "passed": self.passed,
                "info": _plain(self.info),
                "checks": [c.to_json() for c in self.checks]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _plain(obj):
    # json can't take numpy scalars or tuples-as-keys
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        try:
            return obj.item()
        except (ValueError, AttributeError):
            return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return _plain(asdict(obj))
    return obj
