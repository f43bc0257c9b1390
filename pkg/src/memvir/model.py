"""Small MLP encoder with hand-written backprop, plus SGD/momentum/Adam."""

import enum
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1
CLASS_WEIGHTS = "class_weights"


class DimensionMismatch(ValueError):
    pass


class StaleCache(ValueError):
    pass


@dataclass
class ModelParams:
    """Encoder layers ``W{l}`` (in x out) / ``b{l}`` and the D x C class weights.

    ``widths`` lists every layer width from the input to the embedding, so a
    net with ``widths=[32, 64, 16]`` has two affine layers.
    """

    widths: List[int]
    arrays: Dict[str, np.ndarray]
    leaky_slope: float = 0.01

    @property
    def n_layers(self):
        return len(self.widths) - 1

    @property
    def class_weights(self):
        return self.arrays[CLASS_WEIGHTS]

    @property
    def embedding_dim(self):
        return self.widths[-1]

    def copy(self):
        return ModelParams(list(self.widths), {k: v.copy() for k, v in self.arrays.items()}, self.leaky_slope)


def init_params(widths, n_classes, rng: np.random.Generator, leaky_slope=0.01) -> ModelParams:
    """Glorot-uniform layers, zero biases, unit-norm Gaussian class weights."""
    if len(widths) < 2:
        raise ValueError("need at least an input and an embedding width")
    arrays = {}
    for l, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[f"W{l}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        arrays[f"b{l}"] = np.zeros(fan_out)
    cw = rng.standard_normal((widths[-1], n_classes))
    arrays[CLASS_WEIGHTS] = cw / np.linalg.norm(cw, axis=0, keepdims=True)
    return ModelParams(list(widths), arrays, leaky_slope)


def encoder_forward(params: ModelParams, inputs):
    """Run the MLP; hidden layers use leaky ReLU, the last layer is linear.

    Returns:
        (embeddings, cache) where cache holds every layer input and
        pre-activation needed by :func:`encoder_backward`.
    """
    h = np.asarray(inputs, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.widths[0]:
        raise DimensionMismatch(f"input shape {h.shape} does not match input width {params.widths[0]}")
    cache = []
    for l in range(params.n_layers):
        z = h @ params.arrays[f"W{l}"] + params.arrays[f"b{l}"]
        cache.append((h, z))
        h = z if l == params.n_layers - 1 else np.where(z > 0, z, params.leaky_slope * z)
    return h, cache


def encoder_backward(params: ModelParams, cache, d_embeddings):
    """Chain rule through the encoder. Returns grads keyed like ``params.arrays`` (no class weights)."""
    d = np.asarray(d_embeddings, dtype=np.float64)
    if len(cache) != params.n_layers or d.shape != cache[-1][1].shape:
        raise StaleCache(f"gradient shape {d.shape} does not match cached forward pass")
    grads = {}
    for l in reversed(range(params.n_layers)):
        h, z = cache[l]
        if l != params.n_layers - 1:
            d = d * np.where(z > 0, 1.0, params.leaky_slope)
        grads[f"W{l}"] = h.T @ d
        grads[f"b{l}"] = d.sum(axis=0)
        d = d @ params.arrays[f"W{l}"].T
    return grads


class OptimizerKind(str, enum.Enum):
    SGD = "SGD"
    SGD_MOMENTUM = "SGDMomentum"
    ADAM = "Adam"


@dataclass
class OptimizerState:
    kind: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = 1e-4
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = OptimizerKind(self.kind)

    def hyper(self):
        return {
            "kind": self.kind.value,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step": self.step,
        }


def optimizer_step(opt: OptimizerState, params: ModelParams, grads, lr: Optional[float] = None):
    """Update ``params`` in place for every key present in ``grads``."""
    lr = opt.learning_rate if lr is None else lr
    opt.step += 1
    t = opt.step
    for name in sorted(grads):
        g = grads[name]
        p = params.arrays[name]
        if p.shape != g.shape:
            raise DimensionMismatch(f"grad {name} shape {g.shape} != param {p.shape}")
        if opt.kind is OptimizerKind.SGD:
            p -= lr * g
        elif opt.kind is OptimizerKind.SGD_MOMENTUM:
            buf = opt.m.setdefault(name, np.zeros_like(p))
            buf *= opt.momentum
            buf += g
            p -= lr * buf
        else:
            m = opt.m.setdefault(name, np.zeros_like(p))
            v = opt.v.setdefault(name, np.zeros_like(p))
            m *= opt.beta1
            m += (1 - opt.beta1) * g
            v *= opt.beta2
            v += (1 - opt.beta2) * g * g
            m_hat = m / (1 - opt.beta1**t)
            v_hat = v / (1 - opt.beta2**t)
            p -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return params, opt


def save_checkpoint(path, params: ModelParams, opt: OptimizerState, meta=None):
    """Versioned ``.npz`` dump of parameters, optimizer moments and JSON metadata."""
    arrays = {f"param/{k}": v for k, v in params.arrays.items()}
    arrays.update({f"m/{k}": v for k, v in opt.m.items()})
    arrays.update({f"v/{k}": v for k, v in opt.v.items()})
    header = {
        "version": CHECKPOINT_FORMAT_VERSION,
        "widths": params.widths,
        "leaky_slope": params.leaky_slope,
        "optimizer": opt.hyper(),
        "meta": meta or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns (params, optimizer, meta)."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        groups = {"param": {}, "m": {}, "v": {}}
        for key in data.files:
            if "/" in key:
                group, name = key.split("/", 1)
                groups[group][name] = data[key].copy()
    params = ModelParams(header["widths"], groups["param"], header["leaky_slope"])
    opt = OptimizerState(**header["optimizer"], m=groups["m"], v=groups["v"])
    return params, opt, header["meta"]
