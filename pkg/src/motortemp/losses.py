"""Training losses with residual gradients, the elastic-net penalty, and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

LOSS_KINDS = ("squared", "huber", "epsilon_insensitive", "absolute")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "squared"
    delta: float = 1.0
    epsilon: float = 0.1

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.kind == "huber" and not self.delta > 0:
            raise ConfigError("huber delta must be > 0")
        if self.kind == "epsilon_insensitive" and not self.epsilon >= 0:
            raise ConfigError("epsilon must be >= 0")

    def to_dict(self):
        return {"kind": self.kind, "delta": self.delta, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(d)
        return cls(d.get("kind", "squared"), float(d.get("delta", 1.0)), float(d.get("epsilon", 0.1)))


@dataclass(frozen=True)
class PenaltySpec:
    l1: float = 0.0
    l2: float = 0.0

    def __post_init__(self):
        if not (self.l1 >= 0 and self.l2 >= 0):
            raise ConfigError("penalty weights must be >= 0")

    @classmethod
    def from_mixing(cls, coefficient: float, mixing: float) -> "PenaltySpec":
        """Map (penalty coefficient a, mixing m) to ``l1 = a*m``, ``l2 = a*(1-m)/2``."""
        if not 0.0 <= mixing <= 1.0:
            raise ConfigError(f"mixing parameter must lie in [0, 1], got {mixing}")
        if coefficient < 0:
            raise ConfigError("penalty coefficient must be >= 0")
        return cls(coefficient * mixing, 0.5 * coefficient * (1.0 - mixing))

    def to_dict(self):
        return {"l1": self.l1, "l2": self.l2}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d.get("l1", 0.0)), float(d.get("l2", 0.0)))


def loss_value_and_grad(spec: LossSpec, y, f):
    """Elementwise loss and its (sub)gradient with respect to the prediction ``f``."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    r = y - f
    if spec.kind == "squared":
        return r * r, -2.0 * r
    a = np.abs(r)
    s = np.sign(r)
    if spec.kind == "huber":
        d = spec.delta
        inside = a <= d
        value = np.where(inside, 0.5 * r * r, d * (a - 0.5 * d))
        grad = np.where(inside, -r, -d * s)
        return value, grad
    if spec.kind == "epsilon_insensitive":
        outside = a > spec.epsilon
        return np.where(outside, a - spec.epsilon, 0.0), np.where(outside, -s, 0.0)
    return a, -s


def loss_value_and_residual_gradient(spec: LossSpec, y: float, f: float) -> tuple[float, float]:
    v, g = loss_value_and_grad(spec, y, f)
    return float(v), float(g)


def elastic_net_penalty(beta, p: PenaltySpec):
    """``l2*sum(b^2) + l1*sum(|b|)`` and its subgradient (0 at b == 0)."""
    beta = np.asarray(beta, dtype=float)
    value = p.l2 * float(np.sum(beta * beta)) + p.l1 * float(np.sum(np.abs(beta)))
    return value, 2.0 * p.l2 * beta + p.l1 * np.sign(beta)


def _pair(y, yhat):
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size != yhat.size:
        raise DataError(f"length mismatch: {y.size} vs {yhat.size}")
    if y.size == 0:
        raise DataError("empty input")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    r = y - yhat
    return float(np.mean(r * r))


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def linf(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.max(np.abs(y - yhat)))


def r_squared(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise DataError("R^2 needs at least 2 samples")
    r = y - yhat
    ss_res = float(np.sum(r * r))
    dev = y - y.mean()
    ss_tot = float(np.sum(dev * dev))
    if ss_tot == 0.0:
        raise DataError("R^2 undefined for constant targets (SS_tot = 0)")
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class TargetMetrics:
    target: str
    mse: float
    mae: float
    linf: float
    r2: float | None
    n: int

    def to_dict(self):
        return {"target": self.target, "mse": self.mse, "mae": self.mae, "linf": self.linf, "r2": self.r2, "n": self.n}


@dataclass(frozen=True)
class MetricsReport:
    targets: tuple

    def __getitem__(self, name) -> TargetMetrics:
        for m in self.targets:
            if m.target == name:
                return m
        raise KeyError(name)

    @property
    def mean_mse(self) -> float:
        return float(np.mean([m.mse for m in self.targets]))

    def to_list(self):
        return [m.to_dict() for m in self.targets]

    @classmethod
    def from_list(cls, rows):
        return cls(tuple(TargetMetrics(**r) for r in rows))


def metrics_report(Y, Yhat, names) -> MetricsReport:
    """All four metrics per target column. R^2 is ``None`` when a target is constant."""
    Y = np.asarray(Y, dtype=float)
    Yhat = np.asarray(Yhat, dtype=float)
    if Y.shape != Yhat.shape or Y.ndim != 2 or Y.shape[1] != len(names):
        raise DataError(f"shape mismatch: {Y.shape} vs {Yhat.shape} for {len(names)} targets")
    rows = []
    for j, name in enumerate(names):
        try:
            r2 = r_squared(Y[:, j], Yhat[:, j])
        except DataError:
            r2 = None
        rows.append(TargetMetrics(name, mse(Y[:, j], Yhat[:, j]), mae(Y[:, j], Yhat[:, j]), linf(Y[:, j], Yhat[:, j]), r2, int(Y.shape[0])))
    return MetricsReport(tuple(rows))
