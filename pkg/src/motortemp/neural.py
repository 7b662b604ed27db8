"""Hand-written dense / dilated-conv networks with explicit backpropagation.

Shapes: dense layers take ``(batch, features)``; conv layers take
``(batch, time, channels)``. Each ``forward`` returns ``(output, cache)`` and
the matching ``backward(cache, d_out)`` returns ``(d_input, param_grads)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

# ---------------------------------------------------------------- activations


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
}


def _activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}") from None


# ---------------------------------------------------------------- layers


class Dense:
    kind = "dense"

    def __init__(self, W, b, activation="relu"):
        self.W = np.asarray(W, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ConfigError(f"dense layer: W {self.W.shape} and b {self.b.shape} disagree")
        _activation(activation)
        self.activation = activation

    @property
    def params(self):
        return [self.W, self.b]

    def forward(self, x, **_):
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise DataError(f"dense layer expects width {self.W.shape[0]}, got shape {x.shape}")
        f, _ = ACTIVATIONS[self.activation]
        z = x @ self.W + self.b
        a = f(z)
        return a, (x, z, a)

    def backward(self, cache, da):
        x, z, a = cache
        dz = da * ACTIVATIONS[self.activation][1](z, a)
        return dz @ self.W.T, [x.T @ dz, dz.sum(axis=0)]

    def to_dict(self):
        return {"type": "dense", "activation": self.activation, "W": self.W.tolist(), "b": self.b.tolist()}


class Conv1d:
    """Causal dilated convolution without padding.

    ``W[k]`` (shape ``(in_channels, filters)``) is the tap applied to input
    ``t - k*dilation``. Output step ``j`` corresponds to input step
    ``j + (size-1)*dilation``.
    """

    kind = "conv1d"

    def __init__(self, W, b, dilation=1, activation="relu"):
        self.W = np.asarray(W, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.W.ndim != 3 or self.b.shape != (self.W.shape[2],):
            raise ConfigError(f"conv layer: W {self.W.shape} and b {self.b.shape} disagree")
        if int(dilation) < 1:
            raise ConfigError("dilation must be >= 1")
        _activation(activation)
        self.dilation = int(dilation)
        self.activation = activation

    @property
    def size(self):
        return self.W.shape[0]

    @property
    def extent(self):
        return (self.size - 1) * self.dilation + 1

    @property
    def params(self):
        return [self.W, self.b]

    def _offsets(self):
        # tap k reads the slice starting at (size-1-k)*dilation
        return [(self.size - 1 - k) * self.dilation for k in range(self.size)]

    def forward(self, x, **_):
        if x.ndim != 3 or x.shape[2] != self.W.shape[1]:
            raise DataError(f"conv layer expects {self.W.shape[1]} channels, got shape {x.shape}")
        L = x.shape[1]
        if L < self.extent:
            raise DataError(f"sequence length {L} shorter than receptive extent {self.extent}")
        out_len = L - self.extent + 1
        cols = np.concatenate([x[:, o : o + out_len, :] for o in self._offsets()], axis=2)
        Wm = self.W.reshape(-1, self.W.shape[2])
        z = (cols.reshape(-1, cols.shape[2]) @ Wm + self.b).reshape(x.shape[0], out_len, -1)
        a = ACTIVATIONS[self.activation][0](z)
        return a, (x.shape, cols, z, a)

    def backward(self, cache, da):
        shape, cols, z, a = cache
        B, L, C = shape
        dz = da * ACTIVATIONS[self.activation][1](z, a)
        F = dz.shape[2]
        out_len = dz.shape[1]
        dW = (cols.reshape(-1, cols.shape[2]).T @ dz.reshape(-1, F)).reshape(self.W.shape)
        db = dz.sum(axis=(0, 1))
        dcols = (dz.reshape(-1, F) @ self.W.reshape(-1, F).T).reshape(B, out_len, -1)
        dx = np.zeros(shape)
        for k, o in enumerate(self._offsets()):
            dx[:, o : o + out_len, :] += dcols[:, :, k * C : (k + 1) * C]
        return dx, [dW, db]

    def to_dict(self):
        return {
            "type": "conv1d",
            "activation": self.activation,
            "dilation": self.dilation,
            "W": self.W.tolist(),
            "b": self.b.tolist(),
        }


class Dropout:
    """Inverted dropout; identity outside training."""

    kind = "dropout"

    def __init__(self, ratio=0.0):
        if not 0.0 <= ratio < 1.0:
            raise ConfigError(f"dropout ratio must be in [0, 1), got {ratio}")
        self.ratio = float(ratio)
        self.params = []

    def forward(self, x, train=False, rng=None, **_):
        if not train or self.ratio == 0.0:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = 1.0 - self.ratio
        mask = (rng.random(x.shape) < keep) / keep
        return x * mask, mask

    def backward(self, cache, da):
        return (da if cache is None else da * cache), []

    def to_dict(self):
        return {"type": "dropout", "ratio": self.ratio}


class GlobalPool:
    """Collapse the time axis: ``(batch, time, channels) -> (batch, channels)``."""

    kind = "pool"

    def __init__(self, mode="avg"):
        if mode not in ("avg", "max"):
            raise ConfigError(f"unknown pooling {mode!r}")
        self.mode = mode
        self.params = []

    def forward(self, x, **_):
        if x.ndim != 3 or x.shape[1] < 1:
            raise DataError(f"pooling needs a non-empty (batch, time, channels) input, got {x.shape}")
        if self.mode == "avg":
            return x.mean(axis=1), x.shape
        idx = x.argmax(axis=1)
        return np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :], (x.shape, idx)

    def backward(self, cache, da):
        if self.mode == "avg":
            B, L, C = cache
            return np.broadcast_to(da[:, None, :] / L, cache).copy(), []
        shape, idx = cache
        dx = np.zeros(shape)
        np.put_along_axis(dx, idx[:, None, :], da[:, None, :], axis=1)
        return dx, []

    def to_dict(self):
        return {"type": "pool", "mode": self.mode}


class SlidingPool:
    """Pool over every length-``width`` stretch of the time axis."""

    def __init__(self, width, mode="avg"):
        if width < 1:
            raise DataError("pooling width must be >= 1")
        self.width = int(width)
        self.mode = mode

    def forward(self, x):
        W = self.width
        n_out = x.shape[1] - W + 1
        if self.mode == "avg":
            cs = np.concatenate([np.zeros((x.shape[0], 1, x.shape[2])), np.cumsum(x, axis=1)], axis=1)
            return (cs[:, W:] - cs[:, :n_out]) / W, x.shape
        view = np.lib.stride_tricks.sliding_window_view(x, W, axis=1)  # (B, n_out, C, W)
        idx = view.argmax(axis=3)
        return np.take_along_axis(view, idx[..., None], axis=3)[..., 0], (x.shape, idx)

    def backward(self, cache, dp):
        W = self.width
        if self.mode == "avg":
            shape = cache
            B, L, C = shape
            # dx[s] = sum of dp[t] for t in (s-W, s], scaled by 1/W
            cs = np.concatenate([np.zeros((B, 1, C)), np.cumsum(dp, axis=1)], axis=1)
            n_out = dp.shape[1]
            s = np.arange(L)
            hi = np.minimum(s, n_out - 1) + 1
            lo = np.maximum(s - W + 1, 0)
            return (cs[:, hi] - cs[:, lo]) / W, []
        shape, idx = cache
        dx = np.zeros(shape)
        B, n_out, C = idx.shape
        t = np.arange(n_out)[None, :, None] + idx
        b = np.broadcast_to(np.arange(B)[:, None, None], idx.shape)
        c = np.broadcast_to(np.arange(C)[None, None, :], idx.shape)
        np.add.at(dx, (b, t, c), dp)
        return dx, []


def _layer_from_dict(d):
    t = d["type"]
    if t == "dense":
        return Dense(d["W"], d["b"], d["activation"])
    if t == "conv1d":
        return Conv1d(d["W"], d["b"], d["dilation"], d["activation"])
    if t == "dropout":
        return Dropout(d["ratio"])
    if t == "pool":
        return GlobalPool(d["mode"])
    raise ConfigError(f"unknown layer type {t!r}")


# ---------------------------------------------------------------- specs


def _per_layer(value, n, what):
    if isinstance(value, (int, float)):
        return (float(value),) * n
    value = tuple(float(v) for v in value)
    if len(value) != n:
        raise ConfigError(f"{what}: expected {n} values, got {len(value)}")
    return value


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple = (90, 20)
    dropout: tuple = (0.1, 0.1)
    activation: str = "relu"
    n_outputs: int = 3

    kind = "mlp"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "dropout", _per_layer(self.dropout, len(self.widths), "dropout"))
        if not self.widths or any(w < 1 for w in self.widths):
            raise ConfigError("MLP needs at least one hidden layer of width >= 1")
        if any(not 0.0 <= r < 1.0 for r in self.dropout):
            raise ConfigError("dropout must be in [0, 1)")
        _activation(self.activation)

    def to_dict(self):
        return {
            "kind": "mlp",
            "widths": list(self.widths),
            "dropout": list(self.dropout),
            "activation": self.activation,
            "n_outputs": self.n_outputs,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d.get("widths", (90, 20))),
            d.get("dropout", 0.1),
            d.get("activation", "relu"),
            int(d.get("n_outputs", 3)),
        )


@dataclass(frozen=True)
class CnnSpec:
    filters: tuple = (125, 5, 125)
    sizes: tuple = (2, 2, 2)
    dilations: tuple = (3, 1, 1)
    seq_len: int = 100
    dropout: float = 0.0
    activation: str = "relu"
    pooling: str = "avg"
    n_outputs: int = 3

    kind = "cnn"

    def __post_init__(self):
        for name in ("filters", "sizes", "dilations"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        n = len(self.filters)
        if n < 1 or len(self.sizes) != n or len(self.dilations) != n:
            raise ConfigError("CNN filters, sizes and dilations must have the same non-zero length")
        if any(v < 1 for v in (*self.filters, *self.sizes, *self.dilations)):
            raise ConfigError("CNN filters, sizes and dilations must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.pooling not in ("avg", "max"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        _activation(self.activation)
        if self.receptive_field > self.seq_len:
            raise ConfigError(f"receptive field {self.receptive_field} exceeds sequence length {self.seq_len}")

    @property
    def receptive_field(self) -> int:
        return 1 + sum((s - 1) * d for s, d in zip(self.sizes, self.dilations))

    def to_dict(self):
        return {
            "kind": "cnn",
            "filters": list(self.filters),
            "sizes": list(self.sizes),
            "dilations": list(self.dilations),
            "seq_len": self.seq_len,
            "dropout": self.dropout,
            "activation": self.activation,
            "pooling": self.pooling,
            "n_outputs": self.n_outputs,
        }

    @classmethod
    def from_dict(cls, d):
        base = cls.__dataclass_fields__
        kw = {k: d[k] for k in base if k in d}
        for k in ("filters", "sizes", "dilations"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)


# ---------------------------------------------------------------- network


@dataclass
class Network:
    kind: str  # "mlp" or "cnn"
    layers: list
    spec: object = None
    n_inputs: int = 0

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def set_params(self, values):
        values = list(values)
        i = 0
        for layer in self.layers:
            if layer.params:
                layer.W = np.array(values[i], dtype=float)
                layer.b = np.array(values[i + 1], dtype=float)
                i += 2
        if i != len(values):
            raise DataError(f"expected {i} parameter arrays, got {len(values)}")

    def copy_params(self):
        return [p.copy() for p in self.params]

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=float)
        single = x.ndim == (1 if self.kind == "mlp" else 2)
        if single:
            x = x[None]
        caches = []
        for i, layer in enumerate(self.layers):
            try:
                x, c = layer.forward(x, train=train, rng=rng)
            except DataError as e:
                raise DataError(f"layer {i} ({layer.kind}): {e}") from None
            caches.append(c)
        return (x[0] if single else x), {"caches": caches, "single": single, "net": id(self)}

    def backward(self, cache, dy):
        if not cache or cache.get("net") != id(self) or len(cache["caches"]) != len(self.layers):
            raise ValueError("backward needs the cache from a forward pass of this network")
        d = np.asarray(dy, dtype=float)
        if cache["single"]:
            d = d[None]
        grads = []
        for layer, c in zip(reversed(self.layers), reversed(cache["caches"])):
            d, g = layer.backward(c, d)
            grads.append(g)
        return [g for gl in reversed(grads) for g in gl]

    def forward_seq(self, x, n_out, train=False, rng=None):
        """CNN over ``n_out`` consecutive windows sharing one input stretch.

        ``x`` has shape ``(batch, n_out + seq_len - 1, channels)``; output
        ``(batch, n_out, outputs)`` where step ``j`` equals the prediction for
        the window ``x[:, j:j+seq_len]``. Conv activations are computed once
        for the whole stretch, so a dropout unit at a given time step is shared
        by every window that contains it.
        """
        if self.kind != "cnn":
            raise ValueError("forward_seq is only defined for CNNs")
        x = np.asarray(x, dtype=float)
        caches = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, GlobalPool):
                pool = SlidingPool(x.shape[1] - n_out + 1, layer.mode)
                x, c = pool.forward(x)
                caches.append((pool, c))
                B = x.shape[0]
                x = x.reshape(B * n_out, -1)
                continue
            try:
                x, c = layer.forward(x, train=train, rng=rng)
            except DataError as e:
                raise DataError(f"layer {i} ({layer.kind}): {e}") from None
            caches.append(c)
        return x.reshape(B, n_out, -1), {"caches": caches, "seq": (B, n_out), "net": id(self)}

    def backward_seq(self, cache, dy):
        if not cache or cache.get("net") != id(self) or "seq" not in cache:
            raise ValueError("backward_seq needs the cache from forward_seq of this network")
        B, n_out = cache["seq"]
        d = np.asarray(dy, dtype=float).reshape(B * n_out, -1)
        grads = []
        for layer, c in zip(reversed(self.layers), reversed(cache["caches"])):
            if isinstance(layer, GlobalPool):
                pool, pc = c
                d, g = pool.backward(pc, d.reshape(B, n_out, -1))
            else:
                d, g = layer.backward(c, d)
            grads.append(g)
        return [g for gl in reversed(grads) for g in gl]

    def to_dict(self):
        return {
            "kind": self.kind,
            "n_inputs": self.n_inputs,
            "spec": self.spec.to_dict() if self.spec is not None else None,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        spec = None
        if d.get("spec"):
            spec = MlpSpec.from_dict(d["spec"]) if d["kind"] == "mlp" else CnnSpec.from_dict(d["spec"])
        return cls(d["kind"], [_layer_from_dict(x) for x in d["layers"]], spec, int(d.get("n_inputs", 0)))


def _glorot(rng, shape, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def init_params(spec, n_inputs: int, seed: int) -> Network:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    layers = []
    if isinstance(spec, MlpSpec):
        fan_in = n_inputs
        for w, r in zip(spec.widths, spec.dropout):
            layers.append(Dense(_glorot(rng, (fan_in, w), fan_in, w), np.zeros(w), spec.activation))
            if r > 0:
                layers.append(Dropout(r))
            fan_in = w
        layers.append(Dense(_glorot(rng, (fan_in, spec.n_outputs), fan_in, spec.n_outputs), np.zeros(spec.n_outputs), "identity"))
        return Network("mlp", layers, spec, n_inputs)
    if isinstance(spec, CnnSpec):
        ch = n_inputs
        for f, s, d in zip(spec.filters, spec.sizes, spec.dilations):
            layers.append(Conv1d(_glorot(rng, (s, ch, f), s * ch, s * f), np.zeros(f), d, spec.activation))
            if spec.dropout > 0:
                layers.append(Dropout(spec.dropout))
            ch = f
        layers.append(GlobalPool(spec.pooling))
        layers.append(Dense(_glorot(rng, (ch, spec.n_outputs), ch, spec.n_outputs), np.zeros(spec.n_outputs), "identity"))
        return Network("cnn", layers, spec, n_inputs)
    raise ConfigError(f"unsupported network spec {type(spec).__name__}")


# ------------------------------------------------- functional entry points


def dense_forward(layer: Dense, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out, cache = layer.forward(x[None] if single else x)
    return (out[0] if single else out), cache


def conv1d_forward(layer: Conv1d, seq):
    seq = np.asarray(seq, dtype=float)
    single = seq.ndim == 2
    out, cache = layer.forward(seq[None] if single else seq)
    return (out[0] if single else out), cache


def global_avg_pool(seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=float)
    if seq.ndim < 2 or seq.shape[-2] < 1:
        raise DataError("empty sequence")
    return seq.mean(axis=-2)


def apply_dropout(x, ratio: float, seed: int, mode: str = "train") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    out, _ = Dropout(ratio).forward(np.asarray(x, dtype=float), train=mode == "train", rng=np.random.default_rng(seed))
    return out


def network_forward(net: Network, x, train=False, rng=None):
    return net.forward(x, train=train, rng=rng)


def network_backward(net: Network, cache, dy):
    return net.backward(cache, dy)
