"""Small dense network engine with exact gradients to parameters and inputs.

Tensors are plain float64 numpy arrays. A :class:`Model` is an ordered list of
dense layers ``y = act(x @ W.T + b)``; every function here returns new arrays
and never mutates its arguments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, TruncatedFileError

ACTIVATIONS = ("relu", "softmax", "identity")
LOSS_KINDS = ("mse_on_output", "cross_entropy")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class Model:
    layers: tuple[Layer, ...]
    arch_id: str

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer widths do not chain: {a.n_out} -> {b.n_in}")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.n_out,):
                raise ShapeError("bias shape does not match weight rows")

    @property
    def n_inputs(self) -> int:
        return self.layers[0].n_in

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].n_out

    @property
    def n_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)


@dataclass(frozen=True)
class GradientBundle:
    param_grads: tuple[tuple[np.ndarray, np.ndarray], ...]  # (dW, db) per layer
    input_grads: np.ndarray


# ---------------------------------------------------------------------------
# architectures


def parse_arch(arch_id: str) -> list[tuple[int, int, str]]:
    """Return ``(n_in, n_out, activation)`` per layer for a registered arch id.

    Recognised forms are ``mlp-<in>-<hidden...>-<out>`` (ReLU hidden layers,
    softmax output) and ``linreg-<n>-<m>`` (one identity layer).
    """
    m = re.fullmatch(r"(mlp|linreg)((?:-\d+)+)", arch_id)
    if m is None:
        raise ConfigError(f"unknown architecture {arch_id!r}")
    kind = m.group(1)
    widths = [int(w) for w in m.group(2).strip("-").split("-")]
    if any(w <= 0 for w in widths):
        raise ConfigError(f"layer widths must be positive in {arch_id!r}")
    if kind == "linreg":
        if len(widths) != 2:
            raise ConfigError("linreg architectures take exactly two widths")
        return [(widths[0], widths[1], "identity")]
    if len(widths) < 2:
        raise ConfigError("mlp architectures need at least input and output widths")
    spec = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        act = "softmax" if i == len(widths) - 2 else "relu"
        spec.append((a, b, act))
    return spec


def init_model(arch_id: str, seed: int) -> Model:
    """Seeded model: weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in parse_arch(arch_id):
        bound = np.sqrt(1.0 / n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        layers.append(Layer(w, np.zeros(n_out), act))
    return Model(tuple(layers), arch_id)


def model_from_arrays(arch_id, weights, biases, activations) -> Model:
    layers = tuple(
        Layer(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64), act)
        for w, b, act in zip(weights, biases, activations)
    )
    return Model(layers, arch_id)


# ---------------------------------------------------------------------------
# forward / backward


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "softmax":
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    return z


def _as_batch(model: Model, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    elif x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    if x.shape[1] != model.n_inputs:
        raise ShapeError(f"batch width {x.shape[1]} != model input width {model.n_inputs}")
    return x


def _forward_trace(model: Model, x: np.ndarray):
    zs, acts = [], [x]
    a = x
    for layer in model.layers:
        z = a @ layer.weight.T + layer.bias
        a = _activate(z, layer.activation)
        zs.append(z)
        acts.append(a)
    return zs, acts


def forward(model: Model, batch) -> np.ndarray:
    """Output rows for a ``B x n`` batch (images are flattened row-major)."""
    x = _as_batch(model, batch)
    return _forward_trace(model, x)[1][-1]


def predict_labels(model: Model, batch) -> np.ndarray:
    return np.argmax(forward(model, batch), axis=1)


def backward(model: Model, batch, targets, loss_kind: str = "cross_entropy"):
    """Mean batch loss and exact gradients w.r.t. every parameter and input.

    ``mse_on_output`` is the mean over rows of ``||output - target||^2``;
    ``cross_entropy`` requires a softmax output layer.
    """
    if loss_kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {loss_kind!r}")
    x = _as_batch(model, batch)
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim == 1:
        t = t[None, :]
    if t.shape != (x.shape[0], model.n_outputs):
        raise ShapeError(f"targets shape {t.shape} != {(x.shape[0], model.n_outputs)}")
    B = x.shape[0]
    zs, acts = _forward_trace(model, x)
    out = acts[-1]
    last = model.layers[-1]

    if loss_kind == "cross_entropy":
        if last.activation != "softmax":
            raise ConfigError("cross_entropy needs a softmax output layer")
        z = zs[-1]
        log_p = z - z.max(axis=1, keepdims=True)
        log_p = log_p - np.log(np.exp(log_p).sum(axis=1, keepdims=True))
        loss = -float(np.sum(t * log_p)) / B
        dz = (out - t) / B
    else:
        diff = out - t
        loss = float(np.sum(diff * diff)) / B
        g = 2.0 * diff / B
        if last.activation == "softmax":
            dz = out * (g - np.sum(g * out, axis=1, keepdims=True))
        elif last.activation == "relu":
            dz = g * (zs[-1] > 0)
        else:
            dz = g

    grads = [None] * len(model.layers)
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        grads[k] = (dz.T @ acts[k], dz.sum(axis=0))
        da = dz @ layer.weight
        if k == 0:
            break
        prev = model.layers[k - 1].activation
        if prev == "relu":
            dz = da * (zs[k - 1] > 0)
        elif prev == "softmax":
            p = acts[k]
            dz = p * (da - np.sum(da * p, axis=1, keepdims=True))
        else:
            dz = da
    return loss, GradientBundle(tuple(grads), da)


def loss_value(model: Model, batch, targets, loss_kind: str = "cross_entropy") -> float:
    """Loss only; computed independently of :func:`backward`'s chain rule."""
    x = _as_batch(model, batch)
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    out = forward(model, x)
    if loss_kind == "cross_entropy":
        return -float(np.sum(t * np.log(np.clip(out, 1e-300, None)))) / x.shape[0]
    if loss_kind == "mse_on_output":
        return float(np.sum((out - t) ** 2)) / x.shape[0]
    raise ConfigError(f"unknown loss kind {loss_kind!r}")


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def sgd_step(model: Model, grads: GradientBundle, lr: float) -> Model:
    if len(grads.param_grads) != len(model.layers):
        raise ShapeError("gradient bundle does not match model depth")
    layers = []
    for layer, (dw, db) in zip(model.layers, grads.param_grads):
        if dw.shape != layer.weight.shape or db.shape != layer.bias.shape:
            raise ShapeError("gradient shapes do not match parameters")
        layers.append(Layer(layer.weight - lr * dw, layer.bias - lr * db, layer.activation))
    return Model(tuple(layers), model.arch_id)


# ---------------------------------------------------------------------------
# flat parameter vectors


def flatten_params(model: Model) -> np.ndarray:
    """Layer-major, weight before bias, row-major within each array."""
    parts = []
    for layer in model.layers:
        parts.append(layer.weight.ravel())
        parts.append(layer.bias.ravel())
    return np.concatenate(parts)


def unflatten_params(model: Model, flat) -> Model:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.ndim != 1 or flat.size != model.n_params:
        raise ShapeError(f"expected {model.n_params} parameters, got {flat.size}")
    layers, pos = [], 0
    for layer in model.layers:
        nw, nb = layer.weight.size, layer.bias.size
        w = flat[pos:pos + nw].reshape(layer.weight.shape).copy()
        pos += nw
        b = flat[pos:pos + nb].copy()
        pos += nb
        layers.append(Layer(w, b, layer.activation))
    return Model(tuple(layers), model.arch_id)


def save_model(model: Model, path) -> None:
    """``arch_id`` header line, then little-endian float64 parameters."""
    with open(path, "wb") as fh:
        fh.write(model.arch_id.encode("ascii") + b"\n")
        fh.write(flatten_params(model).astype("<f8").tobytes())


def load_model(path) -> Model:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("model file has no header line")
    arch_id = raw[:nl].decode("ascii")
    template = init_model(arch_id, 0)
    body = raw[nl + 1:]
    if len(body) < 8 * template.n_params:
        raise TruncatedFileError(f"model file holds {len(body)} bytes, need {8 * template.n_params}")
    if len(body) > 8 * template.n_params:
        raise FormatError("trailing bytes after model parameters")
    return unflatten_params(template, np.frombuffer(body, dtype="<f8").astype(np.float64))
