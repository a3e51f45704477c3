"""A small feed-forward CNN with exact reverse-mode gradients and Adam.

Activations are channels-last ``(B, H, W, C)`` in float64. Convolutions use
"same" zero padding (odd kernels), stride 1, followed by a rectifier and
non-overlapping max pooling; fully-connected hidden layers use rectifiers
and the output layer is linear. Parameter gradients are sums over the batch.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class ConvStage:
    features: int
    kernel: int = 5
    pool: int = 4

    def __post_init__(self):
        if self.features < 1 or self.pool < 1 or self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidArgumentError("conv stage needs features >= 1, an odd kernel and pool >= 1")


@dataclass(frozen=True)
class NetworkSpec:
    input_size: int
    output: int
    conv: tuple = (ConvStage(8), ConvStage(16))
    fc: tuple = (512,)
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "conv", tuple(c if isinstance(c, ConvStage) else ConvStage(**c) for c in self.conv))
        object.__setattr__(self, "fc", tuple(int(w) for w in self.fc))
        if self.input_size < 1 or self.output < 1 or self.in_channels < 1 or any(w < 1 for w in self.fc):
            raise InvalidArgumentError("sizes must be positive")
        size = self.input_size
        for stage in self.conv:
            size //= stage.pool
            if size < 1:
                raise InvalidArgumentError(f"input {self.input_size} pools down to nothing")

    def shapes(self) -> list[tuple]:
        """Weight and bias shapes, layer by layer."""
        out, size, ch = [], self.input_size, self.in_channels
        for stage in self.conv:
            out += [(ch * stage.kernel**2, stage.features), (stage.features,)]
            size //= stage.pool
            ch = stage.features
        width = size * size * ch
        for w in self.fc + (self.output,):
            out += [(width, w), (w,)]
            width = w
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [asdict(c) for c in self.conv]
        d["fc"] = list(self.fc)
        return d

    @classmethod
    def from_dict(cls, d) -> "NetworkSpec":
        return cls(
            input_size=int(d["input_size"]),
            output=int(d["output"]),
            conv=tuple(ConvStage(**c) for c in d.get("conv", ())),
            fc=tuple(d.get("fc", ())),
            in_channels=int(d.get("in_channels", 1)),
        )


def init_weights(spec: NetworkSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Weights ~ U(-2/sqrt(m), 2/sqrt(m)) with m the layer fan-in; biases zero."""
    params = []
    for shape in spec.shapes():
        if len(shape) == 2:
            bound = 2.0 / np.sqrt(shape[0])
            params.append(rng.uniform(-bound, bound, shape))
        else:
            params.append(np.zeros(shape))
    return params


def flatten(params) -> np.ndarray:
    return np.concatenate([p.ravel() for p in params]) if params else np.zeros(0)


def unflatten(vec, spec: NetworkSpec) -> list[np.ndarray]:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (spec.n_params,):
        raise InvalidArgumentError(f"expected {spec.n_params} parameters, got {vec.shape}")
    out, i = [], 0
    for shape in spec.shapes():
        n = int(np.prod(shape))
        out.append(vec[i : i + n].reshape(shape).copy())
        i += n
    return out


def _check(params, spec, x):
    shapes = spec.shapes()
    if len(params) != len(shapes) or any(p.shape != s for p, s in zip(params, shapes)):
        raise InvalidArgumentError("parameters do not match the network spec")
    x = np.asarray(x, dtype=float)
    if x.ndim == 3 and spec.in_channels == 1:
        x = x[..., None]
    want = (spec.input_size, spec.input_size, spec.in_channels)
    if x.ndim != 4 or x.shape[1:] != want:
        raise InvalidArgumentError(f"expected a batch of {want} inputs, got {x.shape}")
    return x


def _im2col(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (B, H, W, C, k, k)
    B, H, W = x.shape[:3]
    return win.reshape(B * H * W, -1)


def _col2im(dcols, shape, k):
    B, H, W, C = shape
    p = k // 2
    d = dcols.reshape(B, H, W, C, k, k)
    dxp = np.zeros((B, H + 2 * p, W + 2 * p, C))
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + H, j : j + W, :] += d[..., i, j]
    return dxp[:, p : p + H, p : p + W, :]


def _pool_windows(a, q):
    B, H, W, C = a.shape
    h, w = H // q, W // q
    a = a[:, : h * q, : w * q, :]
    return a.reshape(B, h, q, w, q, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, h, w, C, q * q)


def forward(params, spec: NetworkSpec, x, return_cache: bool = False):
    """Network outputs ``(B, spec.output)``; optionally the cache for :func:`backward`."""
    x = _check(params, spec, x)
    cache = []
    a = x
    li = 0
    for stage in spec.conv:
        W, b = params[li], params[li + 1]
        cols = _im2col(a, stage.kernel)
        z = (cols @ W + b).reshape(*a.shape[:3], stage.features)
        win = _pool_windows(np.maximum(z, 0.0), stage.pool)
        arg = np.argmax(win, axis=-1)
        cache.append(("conv", a.shape, cols, z, arg))
        a = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        li += 2
    cache.append(("flatten", a.shape))
    a = a.reshape(a.shape[0], -1)
    n_fc = len(spec.fc) + 1
    for i in range(n_fc):
        W, b = params[li], params[li + 1]
        z = a @ W + b
        last = i == n_fc - 1
        cache.append(("fc", a, z, last))
        a = z if last else np.maximum(z, 0.0)
        li += 2
    return (a, cache) if return_cache else a


def backward(params, spec: NetworkSpec, x, upstream, cache=None) -> list[np.ndarray]:
    """Parameter gradients of ``sum(upstream * forward(x))``."""
    if cache is None:
        _, cache = forward(params, spec, x, return_cache=True)
    g = np.asarray(upstream, dtype=float)
    if g.shape != cache[-1][2].shape:
        raise InvalidArgumentError(f"upstream gradient shape {g.shape} does not match outputs {cache[-1][2].shape}")
    grads = [None] * len(params)
    li = len(params) - 2
    for ci in range(len(cache) - 1, -1, -1):
        entry = cache[ci]
        kind = entry[0]
        if kind == "fc":
            _, a, z, last = entry
            if not last:
                g = g * (z > 0)
            grads[li] = a.T @ g
            grads[li + 1] = g.sum(axis=0)
            g = g @ params[li].T
            li -= 2
        elif kind == "flatten":
            g = g.reshape(entry[1])
        else:
            _, in_shape, cols, z, arg = entry
            stage = spec.conv[ci]
            q = stage.pool
            B, H, W, F = z.shape
            h, w = H // q, W // q
            gw = np.zeros((B, h, w, F, q * q))
            np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
            dr = np.zeros(z.shape)
            dr[:, : h * q, : w * q, :] = gw.reshape(B, h, w, F, q, q).transpose(0, 1, 4, 2, 5, 3).reshape(B, h * q, w * q, F)
            dz = (dr * (z > 0)).reshape(-1, F)
            grads[li] = cols.T @ dz
            grads[li + 1] = dz.sum(axis=0)
            if ci > 0:
                g = _col2im(dz @ params[li].T, in_shape, stage.kernel)
            li -= 2
    return grads


# ------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgumentError("Adam betas must lie in [0, 1)")


def adam_step(params, grads, state: AdamState, config):
    """One bias-corrected Adam update; returns new params and a new state."""
    lr = config.learning_rate
    b1, b2, eps = config.beta1, config.beta2, config.epsilon
    t = state.t + 1
    m = [b1 * mi + (1 - b1) * g for mi, g in zip(state.m, grads)]
    v = [b2 * vi + (1 - b2) * g * g for vi, g in zip(state.v, grads)]
    c1, c2 = 1 - b1**t, 1 - b2**t
    new = [p - lr * (mi / c1) / (np.sqrt(vi / c2) + eps) for p, mi, vi in zip(params, m, v)]
    return new, AdamState(m, v, t)


# ----------------------------------------------------------------- checkpoints


@dataclass
class Network:
    """A spec, its parameters and the affine map from raw outputs to targets."""

    spec: NetworkSpec
    params: list
    out_mean: np.ndarray = field(default=None)
    out_std: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.spec.output
        self.out_mean = np.zeros(n) if self.out_mean is None else np.asarray(self.out_mean, dtype=float).reshape(n)
        self.out_std = np.ones(n) if self.out_std is None else np.asarray(self.out_std, dtype=float).reshape(n)

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x)
        outs = [forward(self.params, self.spec, x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        raw = np.concatenate(outs) if outs else np.zeros((0, self.spec.output))
        return self.out_mean + self.out_std * raw


CHECKPOINT_FORMAT = "handkin.checkpoint/1"


def save_checkpoint(path, networks: dict, meta: dict | None = None) -> None:
    """One JSON header line, then every network's parameters as little-endian float64."""
    header = {"format": CHECKPOINT_FORMAT, "meta": meta or {}, "networks": []}
    blobs = []
    for name, net in networks.items():
        vec = flatten(net.params)
        header["networks"].append(
            {
                "name": name,
                "spec": net.spec.to_dict(),
                "n_params": int(vec.size),
                "out_mean": net.out_mean.tolist(),
                "out_std": net.out_std.tolist(),
            }
        )
        blobs.append(np.ascontiguousarray(vec, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Returns ``(networks: dict, meta: dict)``."""
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise InvalidArgumentError(f"{path}: missing checkpoint header")
    header = json.loads(data[:nl])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgumentError(f"{path}: unknown checkpoint format")
    offset = nl + 1
    nets = {}
    for entry in header["networks"]:
        spec = NetworkSpec.from_dict(entry["spec"])
        n = entry["n_params"]
        if offset + 8 * n > len(data):
            raise InvalidArgumentError(f"{path}: truncated parameter blob")
        vec = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(float)
        offset += 8 * n
        nets[entry["name"]] = Network(spec, unflatten(vec, spec), entry["out_mean"], entry["out_std"])
    if offset != len(data):
        raise InvalidArgumentError(f"{path}: trailing bytes after parameter blob")
    return nets, header["meta"]
