"""Seeded random search over model hyperparameters, ranked by validation loss."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data_model import Dataset, split_leave_one_out
from .errors import ConfigError, MotorTempError
from .linear import LinearSpec
from .losses import LossSpec
from .neural import CnnSpec, MlpSpec, init_params
from .preprocess import PreprocessConfig
from .training import TrainConfig, spec_from_dict, train

KINDS = ("linear", "mlp", "cnn")


@dataclass(frozen=True)
class SearchSpace:
    penalty: tuple = (1e-4, 10.0)  # log-uniform
    mixing: tuple = (0.0, 1.0)
    losses: tuple = ("squared", "huber", "epsilon_insensitive")
    mlp_neurons: tuple = (5, 200)
    mlp_layers: int = 2
    mlp_dropout: tuple = (0.0, 0.1, 0.3)
    cnn_layers: int = 3
    cnn_filters: tuple = (4, 128)
    cnn_sizes: tuple = (2, 3, 5)
    cnn_dilations: tuple = (1, 2, 3)
    cnn_seq_lens: tuple = (25, 50, 100, 200)

    def __post_init__(self):
        for lo, hi in (self.penalty, self.mixing, self.mlp_neurons, self.cnn_filters):
            if not lo <= hi:
                raise ConfigError(f"search bounds out of order: ({lo}, {hi})")
        if self.penalty[0] <= 0:
            raise ConfigError("log-uniform penalty range must be positive")
        for dom in (self.losses, self.mlp_dropout, self.cnn_sizes, self.cnn_dilations, self.cnn_seq_lens):
            if not dom:
                raise ConfigError("empty search domain")
        if self.mlp_layers < 1 or self.cnn_layers < 1:
            raise ConfigError("layer counts must be >= 1")

    def violations(self, spec, loss: LossSpec | None = None) -> list[str]:
        """Reasons ``spec`` (and its loss) fall outside this space."""
        out = []
        if isinstance(spec, LinearSpec):
            if not self.penalty[0] <= spec.penalty <= self.penalty[1]:
                out.append(f"penalty {spec.penalty} outside {self.penalty}")
            if not self.mixing[0] <= spec.mixing <= self.mixing[1]:
                out.append(f"mixing {spec.mixing} outside {self.mixing}")
            if loss is not None and loss.kind not in self.losses:
                out.append(f"loss {loss.kind} not in {self.losses}")
        elif isinstance(spec, MlpSpec):
            if len(spec.widths) != self.mlp_layers:
                out.append(f"{len(spec.widths)} layers, expected {self.mlp_layers}")
            out += [f"width {w} outside {self.mlp_neurons}" for w in spec.widths if not self.mlp_neurons[0] <= w <= self.mlp_neurons[1]]
            out += [f"dropout {r} not in {self.mlp_dropout}" for r in spec.dropout if r not in self.mlp_dropout]
        elif isinstance(spec, CnnSpec):
            if len(spec.filters) != self.cnn_layers:
                out.append(f"{len(spec.filters)} layers, expected {self.cnn_layers}")
            out += [f"filters {f} outside {self.cnn_filters}" for f in spec.filters if not self.cnn_filters[0] <= f <= self.cnn_filters[1]]
            out += [f"filter size {s} not in {self.cnn_sizes}" for s in spec.sizes if s not in self.cnn_sizes]
            out += [f"dilation {d} not in {self.cnn_dilations}" for d in spec.dilations if d not in self.cnn_dilations]
            if spec.seq_len not in self.cnn_seq_lens:
                out.append(f"sequence length {spec.seq_len} not in {self.cnn_seq_lens}")
            if spec.receptive_field > spec.seq_len:
                out.append("receptive field exceeds sequence length")
        else:
            out.append(f"unsupported spec {type(spec).__name__}")
        return out

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**kw)


def sample_config(space: SearchSpace, kind: str, seed: int):
    """Draw ``(model_spec, train_config_fragment)``; deterministic per seed."""
    rng = np.random.default_rng(seed)
    if kind == "linear":
        lo, hi = np.log(space.penalty[0]), np.log(space.penalty[1])
        spec = LinearSpec(float(np.exp(rng.uniform(lo, hi))), float(rng.uniform(*space.mixing)))
        loss = space.losses[int(rng.integers(len(space.losses)))]
        return spec, {"loss": {"kind": loss}}
    if kind == "mlp":
        widths = tuple(int(rng.integers(space.mlp_neurons[0], space.mlp_neurons[1] + 1)) for _ in range(space.mlp_layers))
        dropout = float(space.mlp_dropout[int(rng.integers(len(space.mlp_dropout)))])
        return MlpSpec(widths, dropout), {}
    if kind == "cnn":
        while True:
            n = space.cnn_layers
            filters = tuple(int(rng.integers(space.cnn_filters[0], space.cnn_filters[1] + 1)) for _ in range(n))
            sizes = tuple(int(rng.choice(space.cnn_sizes)) for _ in range(n))
            dil = tuple(int(rng.choice(space.cnn_dilations)) for _ in range(n))
            seq_len = int(rng.choice(space.cnn_seq_lens))
            if 1 + sum((s - 1) * d for s, d in zip(sizes, dil)) <= seq_len:
                return CnnSpec(filters, sizes, dil, seq_len), {}
    raise ConfigError(f"unknown model kind {kind!r}")


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def _param_count(spec, n_features: int) -> int:
    if isinstance(spec, LinearSpec):
        return (n_features + 1) * 3
    return init_params(spec, n_features, 0).n_params


@dataclass
class Leaderboard:
    kind: str
    seed: int
    budget: int
    split: dict
    entries: list = field(default_factory=list)  # ranked, successful
    failed: list = field(default_factory=list)

    @property
    def best(self):
        return self.entries[0] if self.entries else None

    def to_dict(self):
        return {
            "kind": self.kind,
            "seed": self.seed,
            "budget": self.budget,
            "split": self.split,
            "entries": self.entries,
            "failed": self.failed,
            "best": self.best,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _evaluate_candidate(args):
    i, spec, cfg, split, dataset, pcfg = args
    config = {"model": spec.to_dict(), "train": cfg.to_dict(), "preprocess": pcfg.to_dict()}
    entry = {
        "candidate": i,
        "config": config,
        "config_hash": config_hash(config),
        "n_params": _param_count(spec, 3 * (1 + len(pcfg.spans))),
    }
    try:
        _, hist = train(spec, split, dataset, pcfg, cfg)
    except (MotorTempError, FloatingPointError) as e:
        entry.update(status="failed", error=f"{type(e).__name__}: {e}")
        return entry
    best = hist.val_loss[hist.best_epoch]
    entry.update(status="ok", mean_val_loss=best, fold_losses=[best], epochs=len(hist.val_loss))
    return entry


def search(
    space: SearchSpace,
    kind: str,
    dataset: Dataset,
    pcfg: PreprocessConfig,
    cfg_base: TrainConfig,
    budget: int,
    seed: int,
    n_val: int = 1,
    jobs: int = 1,
) -> Leaderboard:
    """Train ``budget`` sampled configurations on one seeded split and rank them."""
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    test_id = dataset.ids[int(rng.integers(len(dataset.ids)))]
    split = split_leave_one_out(dataset, test_id, n_val, seed)
    tasks = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(budget)):
        sample_seed, train_seed = (int(s) for s in child.generate_state(2))
        spec, frag = sample_config(space, kind, sample_seed)
        cfg = replace(cfg_base, seed=train_seed, **({"loss": LossSpec.from_dict(frag["loss"])} if "loss" in frag else {}))
        p = replace(pcfg, seq_len=spec.seq_len) if isinstance(spec, CnnSpec) else pcfg
        tasks.append((i, spec, cfg, split, dataset, p))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_evaluate_candidate, tasks))
    else:
        results = [_evaluate_candidate(t) for t in tasks]
    ok = [r for r in results if r["status"] == "ok"]
    ok.sort(key=lambda r: (r["mean_val_loss"], r["n_params"], r["config_hash"]))
    for rank, r in enumerate(ok):
        r["rank"] = rank
    failed = sorted((r for r in results if r["status"] != "ok"), key=lambda r: r["candidate"])
    return Leaderboard(kind, seed, budget, split.to_dict(), ok, failed)


def best_spec(board: Leaderboard):
    if board.best is None:
        return None
    cfg = board.best["config"]
    return spec_from_dict(cfg["model"]), TrainConfig.from_dict(cfg["train"]), PreprocessConfig.from_dict(cfg["preprocess"])
