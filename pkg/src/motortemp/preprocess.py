"""Feature expansion, standardization and sequence windowing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .data_model import INPUTS, TARGETS, Profile
from .errors import ConfigError, DataError

DEFAULT_SPANS = (10, 30, 60, 120, 300, 600, 1800, 3600)


@dataclass(frozen=True)
class PreprocessConfig:
    spans: tuple = DEFAULT_SPANS
    seq_len: int = 100

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(int(s) for s in self.spans))
        s = self.spans
        if len(s) != 8:
            raise ConfigError(f"expected 8 spans, got {len(s)}")
        if any(v < 1 for v in s) or any(b <= a for a, b in zip(s, s[1:])):
            raise ConfigError(f"spans must be >= 1 and strictly increasing: {s}")
        if int(self.seq_len) < 1:
            raise ConfigError("seq_len must be >= 1")
        object.__setattr__(self, "seq_len", int(self.seq_len))

    def to_dict(self):
        return {"spans": list(self.spans), "seq_len": self.seq_len}

    @classmethod
    def from_dict(cls, d):
        return cls(spans=tuple(d.get("spans", DEFAULT_SPANS)), seq_len=d.get("seq_len", 100))


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    X: np.ndarray
    Y: np.ndarray | None
    feature_names: tuple
    target_names: tuple = TARGETS
    profile_id: str = ""
    t: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise DataError(f"X shape {X.shape} does not match {len(self.feature_names)} feature names")
        if not np.all(np.isfinite(X)):
            raise DataError(f"frame {self.profile_id!r}: non-finite feature values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "target_names", tuple(self.target_names))
        if self.Y is not None:
            Y = np.asarray(self.Y, dtype=float)
            if Y.ndim == 1:
                Y = Y[:, None]
            if Y.shape != (X.shape[0], len(self.target_names)):
                raise DataError(f"Y shape {Y.shape} does not match X rows {X.shape[0]} / targets")
            if not np.all(np.isfinite(Y)):
                raise DataError(f"frame {self.profile_id!r}: non-finite target values")
            object.__setattr__(self, "Y", Y)
        if self.t is None:
            object.__setattr__(self, "t", np.arange(X.shape[0], dtype=float))

    def __len__(self):
        return self.X.shape[0]

    @classmethod
    def from_arrays(cls, X, Y, profile_id="") -> "FeatureFrame":
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        return cls(
            X,
            Y,
            tuple(f"x{i}" for i in range(X.shape[1])),
            tuple(f"y{i}" for i in range(Y.shape[1])),
            profile_id,
        )


def ewma(x, span: int) -> np.ndarray:
    """Recursive EWMA with ``alpha = 2/(span+1)``, seeded with the first sample."""
    if span < 1:
        raise ConfigError(f"span must be >= 1, got {span}")
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x.copy()
    a = 2.0 / (span + 1.0)
    out, _ = lfilter([a], [1.0, a - 1.0], x, zi=[(1.0 - a) * x[0]])
    return out


def expanded_feature_names(spans) -> tuple:
    names = list(INPUTS)
    for f in INPUTS:
        names += [f"{f}_ewm{s}" for s in spans]
    return tuple(names)


def expand_inputs(inputs: np.ndarray, spans) -> np.ndarray:
    """Raw input columns followed by each input's EWMAs in ascending span order."""
    cols = [inputs[:, i] for i in range(inputs.shape[1])]
    for i in range(inputs.shape[1]):
        cols += [ewma(inputs[:, i], s) for s in spans]
    return np.column_stack(cols)


def ewma_expand(p: Profile, spans) -> FeatureFrame:
    spans = tuple(spans)
    for s in spans:
        if s < 1:
            raise ConfigError(f"span must be >= 1, got {s}")
    return FeatureFrame(expand_inputs(p.inputs, spans), p.targets, expanded_feature_names(spans), TARGETS, p.id, p.t)


@dataclass(frozen=True, eq=False)
class Scaler:
    feature_names: tuple
    x_mean: np.ndarray
    x_std: np.ndarray
    target_names: tuple
    y_mean: np.ndarray
    y_std: np.ndarray

    def to_dict(self):
        return {
            "feature_names": list(self.feature_names),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "target_names": list(self.target_names),
            "y_mean": self.y_mean.tolist(),
            "y_std": self.y_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["feature_names"]),
            np.asarray(d["x_mean"], dtype=float),
            np.asarray(d["x_std"], dtype=float),
            tuple(d["target_names"]),
            np.asarray(d["y_mean"], dtype=float),
            np.asarray(d["y_std"], dtype=float),
        )


def fit_scaler(frames) -> Scaler:
    """Population mean/std per column over the concatenation of ``frames``."""
    frames = list(frames)
    if not frames:
        raise DataError("no frames to fit a scaler on")
    names = frames[0].feature_names
    tnames = frames[0].target_names
    for f in frames:
        if f.feature_names != names or f.target_names != tnames:
            raise DataError("frames disagree on feature/target names")
        if f.Y is None:
            raise DataError(f"frame {f.profile_id!r} has no targets")
    X = np.concatenate([f.X for f in frames])
    Y = np.concatenate([f.Y for f in frames])
    if X.shape[0] < 2:
        raise DataError("need at least 2 rows to fit a scaler")
    x_mean, x_std = X.mean(axis=0), X.std(axis=0)
    y_mean, y_std = Y.mean(axis=0), Y.std(axis=0)
    for nm, s in [*zip(names, x_std), *zip(tnames, y_std)]:
        if not s > 0:
            raise DataError(f"zero-variance feature {nm!r}")
    return Scaler(names, x_mean, x_std, tnames, y_mean, y_std)


def transform(sc: Scaler, f: FeatureFrame) -> FeatureFrame:
    if f.feature_names != sc.feature_names:
        raise DataError("feature names do not match the scaler")
    Y = None
    if f.Y is not None:
        if f.target_names != sc.target_names:
            raise DataError("target names do not match the scaler")
        Y = (f.Y - sc.y_mean) / sc.y_std
    return FeatureFrame((f.X - sc.x_mean) / sc.x_std, Y, f.feature_names, f.target_names, f.profile_id, f.t)


def inverse_transform_targets(sc: Scaler, Y_std) -> np.ndarray:
    Y_std = np.asarray(Y_std, dtype=float)
    if Y_std.ndim != 2 or Y_std.shape[1] != len(sc.target_names):
        raise DataError(f"expected {len(sc.target_names)} target columns, got shape {Y_std.shape}")
    return Y_std * sc.y_std + sc.y_mean


def window_index(n_rows: int, seq_len: int, rows=None) -> np.ndarray:
    """Row indices of the causal window ending at each requested row.

    Rows before the start are clamped to row 0, i.e. left padding by repetition.
    """
    if seq_len < 1:
        raise ConfigError("seq_len must be >= 1")
    if n_rows < 1:
        raise DataError("empty frame")
    ends = np.arange(n_rows) if rows is None else np.asarray(rows)
    idx = ends[:, None] + np.arange(-seq_len + 1, 1)[None, :]
    return np.maximum(idx, 0)


def make_windows(f: FeatureFrame, seq_len: int) -> np.ndarray:
    """Array of shape ``(rows, seq_len, features)``; window t ends at row t."""
    return f.X[window_index(len(f), seq_len)]
