"""Mini-batch gradient descent, early stopping, checkpoints, evaluation and LOO folds."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data_model import TARGETS, Dataset, Profile, Split, split_leave_one_out
from .errors import ConfigError, DataError, DivergenceError
from .linear import LinearParams, LinearSpec, predict_linear, sgd_epoch_linear
from .losses import LossSpec, MetricsReport, loss_value_and_grad, metrics_report
from .neural import CnnSpec, MlpSpec, Network, init_params
from .preprocess import (
    FeatureFrame,
    PreprocessConfig,
    Scaler,
    expand_inputs,
    expanded_feature_names,
    ewma_expand,
    fit_scaler,
    inverse_transform_targets,
    transform,
)

FORMAT_VERSION = 1
IMPROVEMENT_EPS = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    schedule: str = "inverse_scaling"
    tau: float | None = None  # None: updates per epoch
    batch: int = 64
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    loss: LossSpec = field(default_factory=LossSpec)
    chunk_len: int = 16  # CNN: consecutive windows per input stretch

    def __post_init__(self):
        if isinstance(self.loss, (dict, str)):
            object.__setattr__(self, "loss", LossSpec.from_dict(self.loss))
        if not self.lr > 0:
            raise ConfigError("learning rate must be > 0")
        if self.schedule not in ("constant", "inverse_scaling"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError("tau must be > 0")
        if self.batch < 1 or self.patience < 1 or self.max_epochs < 1 or self.chunk_len < 1:
            raise ConfigError("batch, patience, max_epochs and chunk_len must be >= 1")

    def to_dict(self):
        return {
            "lr": self.lr,
            "schedule": self.schedule,
            "tau": self.tau,
            "batch": self.batch,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "loss": self.loss.to_dict(),
            "chunk_len": self.chunk_len,
        }

    @classmethod
    def from_dict(cls, d):
        kw = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "loss" in kw:
            kw["loss"] = LossSpec.from_dict(kw["loss"])
        return cls(**kw)


class Schedule:
    """Step size for update ``t``: constant, or ``lr / (1 + t/tau)``."""

    def __init__(self, kind: str, lr: float, tau: float = 1.0):
        self.kind, self.lr, self.tau = kind, lr, tau

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.lr
        return self.lr / (1.0 + t / self.tau)


def gradient_step(params, grads, lr: float):
    if lr < 0:
        raise ConfigError("step size must be >= 0")
    if len(params) != len(grads):
        raise DataError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    out = []
    for p, g in zip(params, grads):
        p = np.asarray(p, dtype=float)
        g = np.asarray(g, dtype=float)
        if p.shape != g.shape:
            raise DataError(f"shape mismatch: parameter {p.shape} vs gradient {g.shape}")
        out.append(p - lr * g)
    return out


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    def to_dict(self):
        return {
            "train_loss": list(self.train_loss),
            "val_loss": list(self.val_loss),
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["train_loss"]), list(d["val_loss"]), int(d["best_epoch"]), d["stop_reason"])


def early_stop_check(history: TrainHistory, patience: int) -> str:
    """``"stop"`` once ``patience`` epochs in a row fail to beat the best by more than 1e-6."""
    v = history.val_loss
    if not v:
        raise ValueError("empty history")
    best = v[0]
    since = 0
    for x in v[1:]:
        if x < best - IMPROVEMENT_EPS:
            best, since = x, 0
        else:
            since += 1
    return "stop" if since >= patience else "continue"


# ------------------------------------------------------------ model specs


def spec_from_dict(d):
    kind = d.get("kind")
    if kind == "linear":
        return LinearSpec.from_dict(d)
    if kind == "mlp":
        return MlpSpec.from_dict(d)
    if kind == "cnn":
        return CnnSpec.from_dict(d)
    raise ConfigError(f"unknown model kind {kind!r}")


def _check_pcfg(spec, pcfg: PreprocessConfig) -> PreprocessConfig:
    if isinstance(spec, CnnSpec) and spec.seq_len != pcfg.seq_len:
        return replace(pcfg, seq_len=spec.seq_len)
    return pcfg


# ------------------------------------------------------------ checkpoint


@dataclass(eq=False)
class Checkpoint:
    kind: str
    model: object  # LinearParams or Network
    spec: object
    scaler: Scaler
    pcfg: PreprocessConfig
    cfg: TrainConfig
    history: TrainHistory
    split: Split | None = None

    def to_dict(self):
        return {
            "format": FORMAT_VERSION,
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "params": self.model.to_dict(),
            "scaler": self.scaler.to_dict(),
            "preprocess": self.pcfg.to_dict(),
            "train_config": self.cfg.to_dict(),
            "history": self.history.to_dict(),
            "split": self.split.to_dict() if self.split else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint format {d.get('format')!r}")
        kind = d["kind"]
        spec = spec_from_dict(d["spec"])
        model = LinearParams.from_dict(d["params"]) if kind == "linear" else Network.from_dict(d["params"])
        return cls(
            kind,
            model,
            spec,
            Scaler.from_dict(d["scaler"]),
            PreprocessConfig.from_dict(d["preprocess"]),
            TrainConfig.from_dict(d["train_config"]),
            TrainHistory.from_dict(d["history"]),
            Split.from_dict(d["split"]) if d.get("split") else None,
        )

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        try:
            return cls.from_dict(json.loads(text))
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise DataError(f"malformed checkpoint: {e}") from None


# ------------------------------------------------------------ prediction


def _padded(X: np.ndarray, seq_len: int) -> np.ndarray:
    return np.concatenate([np.repeat(X[:1], seq_len - 1, axis=0), X], axis=0)


def predict_std(model, spec, X: np.ndarray) -> np.ndarray:
    """Standardized predictions, one per row of standardized features ``X``."""
    if isinstance(model, LinearParams):
        return predict_linear(model, X)
    if model.kind == "mlp":
        return model.forward(X)[0]
    seq_len = spec.seq_len
    out, _ = model.forward_seq(_padded(X, seq_len)[None], X.shape[0])
    return out[0]


def _frames(dataset: Dataset, ids, pcfg):
    return [ewma_expand(dataset.get(i), pcfg.spans) for i in ids]


# ------------------------------------------------------------ training


def _data_loss(loss: LossSpec, Y, F) -> tuple[float, np.ndarray]:
    """Per-row loss summed over targets, averaged over rows; plus d/dF."""
    v, g = loss_value_and_grad(loss, Y, F)
    n = Y.shape[0]
    return float(v.sum()) / n, g / n


def _val_loss(model, spec, frames) -> float:
    """Squared error summed over targets, averaged over all validation rows."""
    total, n = 0.0, 0
    for f in frames:
        r = f.Y - predict_std(model, spec, f.X)
        total += float(np.sum(r * r))
        n += len(f)
    return total / n


def _mlp_batches(frames, batch, rng):
    X = np.concatenate([f.X for f in frames])
    Y = np.concatenate([f.Y for f in frames])
    order = rng.permutation(X.shape[0])
    for s in range(0, len(order), batch):
        rows = order[s : s + batch]
        yield X[rows], Y[rows]


def _cnn_chunks(frames, chunk_len):
    chunk_len = min(chunk_len, min(len(f) for f in frames))
    out = []
    for fi, f in enumerate(frames):
        n = len(f)
        for s in range(0, n, chunk_len):
            out.append((fi, min(s, n - chunk_len)))
    return out, chunk_len


def _cnn_batches(frames, chunks, chunk_len, seq_len, batch, rng):
    per = max(1, batch // chunk_len)
    order = rng.permutation(len(chunks))
    offs = np.arange(-(seq_len - 1), chunk_len)
    for s in range(0, len(order), per):
        xs, ys = [], []
        for ci in order[s : s + per]:
            fi, start = chunks[ci]
            f = frames[fi]
            xs.append(f.X[np.maximum(start + offs, 0)])
            ys.append(f.Y[start : start + chunk_len])
        yield np.stack(xs), np.stack(ys)


def _updates_per_epoch(spec, n_rows, cfg, n_chunks=0, chunk_len=1):
    if isinstance(spec, CnnSpec):
        return math.ceil(n_chunks / max(1, cfg.batch // chunk_len))
    return math.ceil(n_rows / cfg.batch)


def train(spec, split: Split, dataset: Dataset, pcfg: PreprocessConfig, cfg: TrainConfig):
    """Fit one model; returns ``(checkpoint, history)`` with best-validation parameters."""
    split.check(dataset)
    if not split.val_ids:
        raise DataError("training needs at least one validation profile")
    pcfg = _check_pcfg(spec, pcfg)
    raw_train = _frames(dataset, split.train_ids, pcfg)
    if sum(len(f) for f in raw_train) < 2:
        raise DataError("empty training set after preprocessing")
    scaler = fit_scaler(raw_train)
    tr = [transform(scaler, f) for f in raw_train]
    va = [transform(scaler, f) for f in _frames(dataset, split.val_ids, pcfg)]
    n_features = len(scaler.feature_names)
    init_seq, train_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(train_seq)
    n_rows = sum(len(f) for f in tr)

    chunks, chunk_len = ([], 1)
    if isinstance(spec, CnnSpec):
        chunks, chunk_len = _cnn_chunks(tr, cfg.chunk_len)
    per_epoch = _updates_per_epoch(spec, n_rows, cfg, len(chunks), chunk_len)
    sched = Schedule(cfg.schedule, cfg.lr, cfg.tau if cfg.tau is not None else per_epoch)

    if isinstance(spec, LinearSpec):
        model = LinearParams.zeros(n_features, len(TARGETS))
        pen = spec.penalty_spec()
        X_all = FeatureFrame(np.concatenate([f.X for f in tr]), np.concatenate([f.Y for f in tr]), tr[0].feature_names)
    else:
        model = init_params(spec, n_features, int(init_seq.generate_state(1)[0]))

    hist = TrainHistory()
    best_params = _snapshot(model)
    best_val = math.inf
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.max_epochs):
            if isinstance(spec, LinearSpec):
                try:
                    model, tl, step = sgd_epoch_linear(
                        model, X_all, cfg.loss, pen, sched, min(cfg.batch, n_rows), int(rng.integers(2**63)), step
                    )
                except DivergenceError:
                    tl = math.nan
            else:
                tl, step = _neural_epoch(model, spec, tr, chunks, chunk_len, pcfg, cfg, sched, step, rng)
            if not math.isfinite(tl):
                hist.train_loss.append(tl)
                hist.stop_reason = "divergence"
                raise DivergenceError(f"training diverged in epoch {epoch} (learning rate {cfg.lr:g})", hist)
            vl = _val_loss(model, spec, va)
            hist.train_loss.append(tl)
            hist.val_loss.append(vl)
            if not math.isfinite(vl):
                hist.stop_reason = "divergence"
                raise DivergenceError(f"validation loss non-finite in epoch {epoch} (learning rate {cfg.lr:g})", hist)
            if vl < best_val:
                best_val = vl
                best_params = _snapshot(model)
                hist.best_epoch = epoch
            if early_stop_check(hist, cfg.patience) == "stop":
                hist.stop_reason = "early_stop"
                break
        else:
            hist.stop_reason = "max_epochs"
    model = _restore(model, best_params)
    ckpt = Checkpoint(spec.kind, model, spec, scaler, pcfg, cfg, hist, split)
    return ckpt, hist


def _snapshot(model):
    if isinstance(model, LinearParams):
        return (model.beta.copy(), model.bias.copy())
    return model.copy_params()


def _restore(model, snap):
    if isinstance(model, LinearParams):
        return LinearParams(*snap)
    model.set_params(snap)
    return model


def _neural_epoch(net: Network, spec, frames, chunks, chunk_len, pcfg, cfg, sched, step, rng):
    total, count = 0.0, 0
    if isinstance(spec, CnnSpec):
        batches = _cnn_batches(frames, chunks, chunk_len, spec.seq_len, cfg.batch, rng)
    else:
        batches = _mlp_batches(frames, cfg.batch, rng)
    for xb, yb in batches:
        if isinstance(spec, CnnSpec):
            out, cache = net.forward_seq(xb, chunk_len, train=True, rng=rng)
            Yf, Ff = yb.reshape(-1, yb.shape[-1]), out.reshape(-1, out.shape[-1])
            value, dF = _data_loss(cfg.loss, Yf, Ff)
            grads = net.backward_seq(cache, dF.reshape(out.shape))
        else:
            out, cache = net.forward(xb, train=True, rng=rng)
            value, dF = _data_loss(cfg.loss, yb, out)
            grads = net.backward(cache, dF)
        if not math.isfinite(value):
            return math.nan, step
        net.set_params(gradient_step(net.params, grads, sched(step)))
        step += 1
        total += value * yb.shape[0] * (yb.shape[1] if yb.ndim == 3 else 1)
        count += yb.shape[0] * (yb.shape[1] if yb.ndim == 3 else 1)
    if not all(np.all(np.isfinite(p)) for p in net.params):
        return math.nan, step
    return total / count, step


# ------------------------------------------------------------ evaluation


@dataclass(eq=False)
class Evaluation:
    profile_id: str
    report: MetricsReport
    t: np.ndarray
    actual: np.ndarray  # degC, (n, 3)
    predicted: np.ndarray  # degC, (n, 3)
    inputs: np.ndarray | None = None

    @property
    def error(self) -> np.ndarray:
        return self.actual - self.predicted


def predict(ckpt: Checkpoint, inputs: np.ndarray) -> np.ndarray:
    """Predicted temperatures (degC) for every row of raw ``n_m, I_m, T_ref`` inputs."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != 3 or inputs.shape[0] < 1:
        raise DataError(f"expected (rows, 3) raw inputs, got {inputs.shape}")
    names = expanded_feature_names(ckpt.pcfg.spans)
    if names != ckpt.scaler.feature_names:
        raise DataError("checkpoint scaler features do not match its preprocessing config")
    X = (expand_inputs(inputs, ckpt.pcfg.spans) - ckpt.scaler.x_mean) / ckpt.scaler.x_std
    return inverse_transform_targets(ckpt.scaler, predict_std(ckpt.model, ckpt.spec, X))


def evaluate(ckpt: Checkpoint, profile: Profile) -> Evaluation:
    frame = ewma_expand(profile, ckpt.pcfg.spans)
    if frame.feature_names != ckpt.scaler.feature_names:
        raise DataError("profile features do not match the checkpoint scaler")
    Yhat = predict(ckpt, profile.inputs)
    actual = np.array(profile.targets)
    return Evaluation(profile.id, metrics_report(actual, Yhat, TARGETS), np.array(profile.t), actual, Yhat, np.array(profile.inputs))


# ------------------------------------------------------------ leave-one-profile-out


@dataclass
class FoldResult:
    fold: int
    test_id: str
    split: Split
    report: MetricsReport
    best_epoch: int
    stop_reason: str
    epochs: int

    def to_dict(self):
        return {
            "fold": self.fold,
            "test_id": self.test_id,
            "split": self.split.to_dict(),
            "metrics": self.report.to_list(),
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
            "epochs": self.epochs,
        }


def _run_fold(args):
    dataset, pcfg, cfg, spec, n_val, fold, test_id = args
    fold_seed = cfg.seed + fold
    split = split_leave_one_out(dataset, test_id, n_val, fold_seed)
    ckpt, hist = train(spec, split, dataset, pcfg, replace(cfg, seed=fold_seed))
    ev = evaluate(ckpt, dataset.get(test_id))
    return FoldResult(fold, test_id, split, ev.report, hist.best_epoch, hist.stop_reason, len(hist.val_loss))


def summarize(folds) -> dict:
    out = {}
    for name in TARGETS:
        rows = [f.report[name] for f in folds]
        entry = {}
        for key in ("mse", "mae", "linf", "r2"):
            vals = [getattr(r, key) for r in rows if getattr(r, key) is not None]
            entry[key] = {"mean": float(np.mean(vals)), "max": float(np.max(vals))} if vals else None
        out[name] = entry
    return out


def run_loo_folds(dataset: Dataset, pcfg: PreprocessConfig, cfg: TrainConfig, spec, n_val: int = 1, jobs: int = 1):
    """Every profile serves once as the test set. Fold ``i`` uses seed ``cfg.seed + i``."""
    if len(dataset.profiles) < 3:
        raise DataError("leave-one-profile-out needs at least 3 profiles")
    tasks = [(dataset, pcfg, cfg, spec, n_val, i, pid) for i, pid in enumerate(dataset.ids)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            folds = list(ex.map(_run_fold, tasks))
    else:
        folds = [_run_fold(t) for t in tasks]
    return folds, summarize(folds)


def loo_report_json(folds, summary, spec, pcfg, cfg, n_val) -> str:
    doc = {
        "model": spec.to_dict(),
        "preprocess": pcfg.to_dict(),
        "train_config": cfg.to_dict(),
        "n_val": n_val,
        "folds": [f.to_dict() for f in folds],
        "summary": summary,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
