"""Linear regressor: elastic-net SGD trainer plus the normal-equation solution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DivergenceError, NumericError
from .losses import LossSpec, PenaltySpec, elastic_net_penalty, loss_value_and_grad


@dataclass(frozen=True)
class LinearSpec:
    """Penalty coefficient and mixing parameter, as searched over and reported."""

    penalty: float = 0.43
    mixing: float = 0.99

    kind = "linear"

    def penalty_spec(self) -> PenaltySpec:
        return PenaltySpec.from_mixing(self.penalty, self.mixing)

    def to_dict(self):
        return {"kind": "linear", "penalty": self.penalty, "mixing": self.mixing}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d.get("penalty", 0.43)), float(d.get("mixing", 0.99)))


@dataclass(frozen=True, eq=False)
class LinearParams:
    beta: np.ndarray  # (features, targets)
    bias: np.ndarray  # (targets,)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim == 1:
            beta = beta[:, None]
        bias = np.atleast_1d(np.asarray(self.bias, dtype=float))
        if bias.shape != (beta.shape[1],):
            raise DataError(f"bias shape {bias.shape} does not match beta {beta.shape}")
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(bias))):
            raise NumericError("non-finite linear parameters")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "bias", bias)

    @classmethod
    def zeros(cls, n_features: int, n_targets: int = 3) -> "LinearParams":
        return cls(np.zeros((n_features, n_targets)), np.zeros(n_targets))

    @property
    def n_params(self) -> int:
        return self.beta.size + self.bias.size

    def to_dict(self):
        return {"type": "linear", "beta": self.beta.tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["beta"], dtype=float), np.asarray(d["bias"], dtype=float))


def predict_linear(p: LinearParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != p.beta.shape[0]:
        raise DataError(f"expected {p.beta.shape[0]} features, got {X.shape[1]}")
    out = p.bias + X @ p.beta
    return out[0] if single else out


def ols_closed_form(X, Y, intercept: bool = True, max_cond: float = 1e12) -> LinearParams:
    """Least-squares fit via ``(X^T X)^-1 X^T Y``; the intercept column is added when asked."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    A = np.column_stack([np.ones(X.shape[0]), X]) if intercept else X
    G = A.T @ A
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > max_cond:
        raise NumericError(f"X^T X is singular or ill-conditioned (condition estimate {cond:.3g})")
    B = np.linalg.solve(G, A.T @ Y)
    if intercept:
        return LinearParams(B[1:], B[0])
    return LinearParams(B, np.zeros(B.shape[1]))


def objective(p: LinearParams, X, Y, loss: LossSpec, pen: PenaltySpec):
    """Regularized objective and gradients ``(value, d_beta, d_bias)``.

    Data term is the per-row loss summed over targets and averaged over rows,
    so each target column is an independent elastic-net problem.
    """
    if np.asarray(X).shape[1] != p.beta.shape[0]:
        raise DataError(f"expected {p.beta.shape[0]} features, got {np.asarray(X).shape[1]}")
    return _objective(p.beta, p.bias, np.asarray(X, dtype=float), np.asarray(Y, dtype=float), loss, pen)


def _objective(beta, bias, X, Y, loss, pen):
    v, g = loss_value_and_grad(loss, Y, bias + X @ beta)
    n = X.shape[0]
    pv, pg = elastic_net_penalty(beta, pen)
    value = float(v.sum()) / n + pv
    return value, X.T @ g / n + pg, g.sum(axis=0) / n


def _soft_threshold(x, thr):
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


def sgd_epoch_linear(p: LinearParams, frame, loss: LossSpec, pen: PenaltySpec, lr, batch: int, seed: int, step: int = 0):
    """One shuffled pass of mini-batch gradient descent.

    ``lr`` is a constant or a callable mapping the update counter to a step
    size. The smooth part of the objective takes a plain gradient step; the
    L1 part is applied as a soft-threshold of the same step size so weights
    can reach exact zeros. Returns ``(params, objective_after_epoch, step)``.
    """
    X, Y = frame.X, frame.Y
    n = X.shape[0]
    if not 1 <= batch <= n:
        raise DataError(f"batch size {batch} outside [1, {n}]")
    rate = lr if callable(lr) else (lambda t, c=float(lr): c)
    smooth = PenaltySpec(0.0, pen.l2)
    beta, bias = p.beta.copy(), p.bias.copy()
    order = np.random.default_rng(seed).permutation(n)
    # overflow is caught by the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n, batch):
            rows = order[start : start + batch]
            g_rate = rate(step)
            if g_rate < 0:
                raise DataError("learning rate must be >= 0")
            _, d_beta, d_bias = _objective(beta, bias, X[rows], Y[rows], loss, smooth)
            beta = _soft_threshold(beta - g_rate * d_beta, g_rate * pen.l1)
            bias = bias - g_rate * d_bias
            step += 1
        value = _objective(beta, bias, X, Y, loss, pen)[0]
    if not (np.isfinite(value) and np.all(np.isfinite(beta)) and np.all(np.isfinite(bias))):
        raise DivergenceError(f"linear SGD diverged (learning rate {rate(0):g})")
    return LinearParams(beta, bias), value, step
