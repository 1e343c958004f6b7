"""Pass/fail records for numerically checked inequalities ``lhs <= rhs``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SLACK = 1e-10


@dataclass
class BoundCertificate:
    """One checked inequality family: ``lhs[i] <= rhs[i]`` for every sample.

    A sample passes when ``rhs - lhs >= -slack * max(1, rhs)`` with slack 1e-10
    by default; the slack only absorbs rounding where the exact inequality is
    an equality (e.g. v = 0). Checks whose rhs is itself a tolerance use 0.
    """

    name: str
    lhs: np.ndarray
    rhs: np.ndarray
    inputs: dict = field(default_factory=dict)
    provenance: str = ""
    values: dict = field(default_factory=dict)
    slack: float = SLACK

    def __post_init__(self):
        self.lhs = np.atleast_1d(np.asarray(self.lhs, dtype=float))
        self.rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        if self.lhs.shape != self.rhs.shape:
            raise ValueError(f"lhs/rhs shapes differ: {self.lhs.shape} vs {self.rhs.shape}")

    @property
    def margins(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def margin(self) -> float:
        return float(np.min(self.margins)) if self.lhs.size else float("inf")

    @property
    def failures(self) -> np.ndarray:
        slack = self.slack * np.maximum(1.0, np.abs(self.rhs))
        return np.flatnonzero(~(self.margins >= -slack))

    @property
    def passed(self) -> bool:
        return self.failures.size == 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pass": self.passed,
            "margin": self.margin if self.lhs.size else None,
            "inputs": _jsonable(self.inputs),
            "lhs": self.lhs.tolist(),
            "rhs": self.rhs.tolist(),
            "values": _jsonable(self.values),
            "provenance": self.provenance,
            "slack": self.slack,
        }

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.lhs.size} samples, margin {self.margin:.3e}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def combine(name: str, parts: list[BoundCertificate], provenance: str = "") -> BoundCertificate:
    """Concatenate several certificates into one (pass iff all parts pass)."""
    lhs = np.concatenate([c.lhs for c in parts]) if parts else np.zeros(0)
    rhs = np.concatenate([c.rhs for c in parts]) if parts else np.zeros(0)
    if len({c.slack for c in parts}) > 1:
        raise ValueError("cannot combine certificates with different slack")
    return BoundCertificate(
        name,
        lhs,
        rhs,
        inputs={"parts": [c.name for c in parts]},
        provenance=provenance,
        values={c.name: c.values for c in parts},
        slack=parts[0].slack if parts else SLACK,
    )
