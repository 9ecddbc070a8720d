"""Convolutional feature extractor plus the FC/BN/ReLU classifier head."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers
from .params import NumericError, ParamSet, check_finite


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Network shape.

    ``conv_channels`` gives one 3x3 conv + ReLU + 2x2 max-pool block per entry.
    The head has one module per entry of ``head_widths`` followed by the output
    module, each module being fully-connected + batch-norm + ReLU.
    """

    input_size: int = 64
    n_out: int = 5
    conv_channels: tuple[int, ...] = (8, 16, 32)
    kernel: int = 3
    head_widths: tuple[int, ...] = (128, 64)
    final_relu: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.n_out < 1 or any(c < 1 for c in self.conv_channels) or any(w < 1 for w in self.head_widths):
            raise ValueError("layer widths must be positive")
        if self.input_size % (2 ** len(self.conv_channels)):
            raise ValueError("input_size must be divisible by 2**len(conv_channels)")

    @property
    def feature_dim(self) -> int:
        side = self.input_size // 2 ** len(self.conv_channels)
        channels = self.conv_channels[-1] if self.conv_channels else 1
        return side * side * channels

    @property
    def head_dims(self) -> tuple[int, ...]:
        return (*self.head_widths, self.n_out)

    @property
    def head_layer_names(self) -> list[str]:
        return [f"fc{i}" for i in range(len(self.head_dims))]


@dataclass
class BatchNormState:
    mean: dict[str, np.ndarray] = field(default_factory=dict)
    var: dict[str, np.ndarray] = field(default_factory=dict)
    momentum: float = 0.1
    training: bool = True

    @classmethod
    def fresh(cls, spec: ModelSpec, momentum: float = 0.1) -> "BatchNormState":
        names = spec.head_layer_names
        dt = np.dtype(spec.dtype)
        return cls({n: np.zeros(d, dt) for n, d in zip(names, spec.head_dims)},
                   {n: np.ones(d, dt) for n, d in zip(names, spec.head_dims)}, momentum)

    def clone(self) -> "BatchNormState":
        return copy.deepcopy(self)

    def train(self) -> "BatchNormState":
        self.training = True
        return self

    def eval(self) -> "BatchNormState":
        self.training = False
        return self


def init_params(spec: ModelSpec, seed) -> ParamSet:
    """Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases, BN scale 1 / shift 0."""
    rng = np.random.default_rng(seed)
    entries = []
    c_in = 1
    for i, c_out in enumerate(spec.conv_channels):
        fan_in = spec.kernel * spec.kernel * c_in
        bound = np.sqrt(6.0 / fan_in)
        entries.append((f"conv{i}.w", rng.uniform(-bound, bound, (spec.kernel, spec.kernel, c_in, c_out))))
        entries.append((f"conv{i}.b", np.zeros(c_out)))
        c_in = c_out
    d_in = spec.feature_dim
    for name, d_out in zip(spec.head_layer_names, spec.head_dims):
        entries += head_layer_params(name, d_in, d_out, rng)
        d_in = d_out
    dt = np.dtype(spec.dtype)
    return ParamSet((k, v.astype(dt)) for k, v in entries)


def head_layer_params(name: str, d_in: int, d_out: int, rng: np.random.Generator, dtype="float64"):
    bound = np.sqrt(6.0 / d_in)
    return [(f"{name}.w", rng.uniform(-bound, bound, (d_in, d_out)).astype(dtype)),
            (f"{name}.b", np.zeros(d_out, dtype)),
            (f"{name}.gamma", np.ones(d_out, dtype)),
            (f"{name}.beta", np.zeros(d_out, dtype))]


@dataclass
class ForwardCache:
    spec: ModelSpec
    params: ParamSet
    version: int
    steps: list
    features: np.ndarray


def extract_features(spec: ModelSpec, params: ParamSet, x: np.ndarray, steps: list | None = None) -> np.ndarray:
    """Run the convolutional extractor and flatten; ``x`` is (N, H, W)."""
    h = x[..., None]
    for i in range(len(spec.conv_channels)):
        # pooling before the ReLU gives the same map (ReLU is monotone) at a quarter of the cost
        h, c_conv = layers.conv_forward(h, params[f"conv{i}.w"], params[f"conv{i}.b"])
        h, c_pool = layers.maxpool_forward(h)
        h, c_relu = layers.relu_forward(h)
        if steps is not None:
            steps.append(("conv", i, c_conv, c_relu, c_pool))
    return h.reshape(h.shape[0], -1)


def forward(spec: ModelSpec, params: ParamSet, bn: BatchNormState, batch: np.ndarray):
    """Logits for a batch of (N, H, W) images plus the cache for :func:`backward`.

    In training mode batch-norm normalises with batch statistics and updates
    ``bn``'s running statistics in place; in eval mode it uses them.
    """
    batch = np.asarray(batch, dtype=spec.dtype)
    if batch.ndim != 3 or batch.shape[1:] != (spec.input_size, spec.input_size):
        raise ValueError(f"expected (N, {spec.input_size}, {spec.input_size}) input, got {batch.shape}")
    steps: list = []
    h = extract_features(spec, params, batch, steps)
    feats = h
    last = len(spec.head_dims) - 1
    for i, name in enumerate(spec.head_layer_names):
        h, c_lin = layers.linear_forward(h, params[f"{name}.w"], params[f"{name}.b"])
        h, c_bn, mu, var = layers.batchnorm_forward(h, params[f"{name}.gamma"], params[f"{name}.beta"],
                                                    bn.mean[name], bn.var[name], bn.training)
        if bn.training:
            n = h.shape[0]
            unbiased = var * n / (n - 1) if n > 1 else var
            m = bn.momentum
            bn.mean[name] = (1 - m) * bn.mean[name] + m * mu
            bn.var[name] = (1 - m) * bn.var[name] + m * unbiased
        c_relu = None
        if i < last or spec.final_relu:
            h, c_relu = layers.relu_forward(h)
        steps.append(("head", name, c_lin, c_bn, c_relu))
    check_finite(h, "logits")
    return h, ForwardCache(spec, params, params.version, steps, feats)


def backward(cache: ForwardCache, dlogits: np.ndarray) -> ParamSet:
    """Exact reverse-mode gradients of the cached forward pass."""
    if cache.params.version != cache.version:
        raise StaleCacheError("parameters changed since the forward pass")
    params = cache.params
    grads: dict[str, np.ndarray] = {}
    g = np.asarray(dlogits, dtype=cache.spec.dtype)
    for step in reversed(cache.steps):
        if step[0] == "head":
            _, name, c_lin, c_bn, c_relu = step
            if c_relu is not None:
                g = layers.relu_backward(g, c_relu)
            g, grads[f"{name}.gamma"], grads[f"{name}.beta"] = layers.batchnorm_backward(g, c_bn)
            g, grads[f"{name}.w"], grads[f"{name}.b"] = layers.linear_backward(g, c_lin, params[f"{name}.w"])
        else:
            _, i, c_conv, c_relu, c_pool = step
            if g.ndim == 2:
                g = g.reshape(c_pool[1].shape)
            g = layers.relu_backward(g, c_relu)
            g = layers.maxpool_backward(g, c_pool)
            g, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = layers.conv_backward(g, c_conv, need_dx=i > 0)
    out = ParamSet((name, grads[name]) for name in params.names())
    for name, value in out.items():
        check_finite(value, f"gradient of {name}")
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels, rows=None):
    """Mean cross-entropy over ``rows`` (all rows by default) and its gradient.

    ``labels`` are class codes ``1..C`` (column ``c - 1``). Rows outside the
    selection get a zero gradient, so the loss can be restricted to one task's
    samples while the forward pass still covered the whole mini-batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError("one label per logit row required")
    if labels.size and (labels.min() < 1 or labels.max() > c):
        raise ValueError(f"labels must lie in [1, {c}]")
    sel = np.arange(n) if rows is None else np.asarray(rows)
    if sel.dtype == bool:
        sel = np.flatnonzero(sel)
    dlogits = np.zeros_like(logits)
    if sel.size == 0:
        return 0.0, dlogits
    z = logits[sel] - logits[sel].max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    idx = labels[sel] - 1
    log_p = z[np.arange(sel.size), idx] - log_norm
    loss = float(-log_p.mean())
    probs = np.exp(z - log_norm[:, None])
    probs[np.arange(sel.size), idx] -= 1.0
    dlogits[sel] = probs / sel.size
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    return loss, dlogits


def replace_head(params: ParamSet, spec: ModelSpec, new_out: int, seed) -> tuple[ParamSet, ModelSpec]:
    """Swap the output module for a freshly initialised one of width ``new_out``."""
    if new_out < 2:
        raise ValueError("new head needs at least 2 outputs")
    new_spec = replace(spec, n_out=new_out)
    last = spec.head_layer_names[-1]
    d_in = spec.head_dims[-2] if len(spec.head_dims) > 1 else spec.feature_dim
    fresh = dict(head_layer_params(last, d_in, new_out, np.random.default_rng(seed), spec.dtype))
    entries = [(k, fresh[k] if k in fresh else v.copy()) for k, v in params.items()]
    return ParamSet(entries), new_spec


def replace_head_bn(bn: BatchNormState, spec: ModelSpec) -> BatchNormState:
    """Running statistics matching a replaced head (output layer reset)."""
    out = bn.clone()
    last = spec.head_layer_names[-1]
    out.mean[last] = np.zeros(spec.n_out, spec.dtype)
    out.var[last] = np.ones(spec.n_out, spec.dtype)
    return out
