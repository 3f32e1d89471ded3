"""Optimized-trigger backdoor: placement search, value descent, data poisoning.

A trigger is a sparse set of flat pixel indices with replacement values and a
target label. Embedding overwrites those pixels and leaves the rest alone.
The fixed-patch (FT) and sliced-patch (DFT) baselines live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, concat
from .errors import ConfigError, FormatError, ShapeError
from .nn import Model, backward, one_hot


@dataclass(frozen=True)
class Trigger:
    placements: np.ndarray  # distinct flat indices into an H*W image
    values: np.ndarray  # same length, each in [0, 1]
    target_label: int

    def __post_init__(self):
        p = np.asarray(self.placements, dtype=np.int64).ravel()
        v = np.asarray(self.values, dtype=np.float64).ravel()
        object.__setattr__(self, "placements", p)
        object.__setattr__(self, "values", v)
        if p.size != v.size:
            raise ShapeError("placements and values differ in length")
        if np.unique(p).size != p.size:
            raise ConfigError("trigger placements must be distinct")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ConfigError("trigger values must lie in [0, 1]")

    @property
    def tri_size(self) -> int:
        return int(self.placements.size)


@dataclass
class ValueTrace:
    """Per-iteration loss and step size from :func:`optimize_values`."""

    losses: list = field(default_factory=list)
    gammas: list = field(default_factory=list)


def build_trigger_training_set(client_data, target_label: int) -> Dataset:
    """All malicious clients' images, in order, relabelled to ``target_label``."""
    nonempty = [d for d in client_data if len(d)]
    if not nonempty:
        raise ConfigError("no malicious client data to build a trigger set from")
    pooled = concat(nonempty)
    return Dataset(pooled.images.copy(), np.full(len(pooled), target_label, dtype=np.int64), pooled.n_classes)


def apply_trigger(x, trigger: Trigger) -> np.ndarray:
    """Embed ``trigger`` into one image or a stack of images (last two axes H, W).

    Returns a new array; pixels outside the placements are untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    if trigger.tri_size == 0:
        return out
    n_pix = x.shape[-1] * x.shape[-2] if x.ndim >= 2 else x.shape[-1]
    if trigger.placements.min() < 0 or trigger.placements.max() >= n_pix:
        raise ShapeError(f"trigger placement outside an image of {n_pix} pixels")
    if x.ndim == 1:
        out[trigger.placements] = trigger.values
        return out
    flat = out.reshape(*x.shape[:-2], n_pix)
    flat[..., trigger.placements] = trigger.values
    return flat.reshape(x.shape)


def _input_gradient_sum(model: Model, images: np.ndarray, target_label: int):
    """Mean-over-batch MSE to one-hot target, and the per-pixel gradient summed over images."""
    flat = images.reshape(images.shape[0], -1)
    targets = one_hot(np.full(flat.shape[0], target_label), model.n_outputs)
    loss, grads = backward(model, flat, targets, "mse_on_output")
    return loss, grads.input_grads.sum(axis=0)


def compute_placements(model: Model, D: Dataset, target_label: int, tri_size: int) -> np.ndarray:
    """Flat indices of the ``tri_size`` pixels with the largest |summed gradient|.

    Returned in descending gradient order; exact ties go to the lower index.
    """
    n_pix = D.images.shape[1] * D.images.shape[2]
    if len(D) == 0:
        raise ConfigError("trigger training set is empty")
    if not 0 <= tri_size <= n_pix:
        raise ConfigError(f"tri_size {tri_size} outside [0, {n_pix}]")
    _, g = _input_gradient_sum(model, D.images, target_label)
    order = np.argsort(-np.abs(g), kind="stable")
    return order[:tri_size]


def optimize_values(placements, model: Model, D: Dataset, target_label: int,
                    n_iter: int = 10, gamma0: float = 5.0, return_trace: bool = False):
    """Gradient descent on the trigger pixel values.

    Values start at the per-pixel mean image of ``D``. Iteration 1 takes its
    gradient on the clean images; later iterations embed the current values
    into a fresh copy of ``D`` first. The step size halves whenever the loss
    rises above the previous iteration's, and values are clamped to [0, 1]
    after every update.
    """
    placements = np.asarray(placements, dtype=np.int64)
    if n_iter < 1:
        raise ConfigError("n_iter must be >= 1")
    if placements.size == 0:
        raise ConfigError("no placements to optimise")
    flat = D.flat_images
    if placements.max() >= flat.shape[1]:
        raise ShapeError("placement outside the image")
    values = flat.mean(axis=0)[placements]
    gamma = float(gamma0)
    trace = ValueTrace()
    prev = None
    for it in range(1, n_iter + 1):
        batch = flat.copy()
        if it > 1:
            batch[:, placements] = values
        loss, g = _input_gradient_sum(model, batch, target_label)
        if prev is not None and loss > prev:
            gamma *= 0.5
        prev = loss
        trace.losses.append(loss)
        trace.gammas.append(gamma)
        values = np.clip(values - gamma * g[placements], 0.0, 1.0)
    if return_trace:
        return values, trace
    return values


def optimize_trigger(model: Model, D: Dataset, target_label: int, tri_size: int,
                     n_iter: int = 10, gamma0: float = 5.0) -> tuple[Trigger, ValueTrace]:
    """Placement search followed by value optimisation against ``model``."""
    placements = compute_placements(model, D, target_label, tri_size)
    values, trace = optimize_values(placements, model, D, target_label, n_iter, gamma0, return_trace=True)
    return Trigger(placements, values, target_label), trace


def poison_dataset(client_data: Dataset, trigger: Trigger, rate: float, seed) -> Dataset:
    """Seeded shuffle, then trigger and relabel the first ceil(rate * N) examples."""
    if not 0.0 <= rate <= 1.0:
        raise ConfigError("poison rate must be in [0, 1]")
    n = len(client_data)
    order = np.random.default_rng(seed).permutation(n)
    images = client_data.images[order].copy()
    labels = client_data.labels[order].copy()
    n_poison = math.ceil(rate * n - 1e-9)
    if n_poison:
        images[:n_poison] = apply_trigger(images[:n_poison], trigger)
        labels[:n_poison] = trigger.target_label
    return Dataset(images, labels, client_data.n_classes)


def make_fixed_trigger(image_shape, target_label: int, tri_size: int = 16) -> Trigger:
    """White square patch in the top-left corner (first ``tri_size`` cells, row-major)."""
    h, w = image_shape
    if h < 6 or w < 6:
        raise ConfigError("fixed trigger needs an image of at least 6x6")
    side = math.ceil(math.sqrt(tri_size))
    if side > h or side > w:
        raise ConfigError(f"{side}x{side} patch does not fit a {h}x{w} image")
    rows, cols = np.divmod(np.arange(side * side), side)
    placements = (rows * w + cols)[:tri_size]
    return Trigger(placements, np.ones(tri_size), target_label)


def split_distributed_trigger(trigger: Trigger, n_parts: int) -> list[Trigger]:
    """Contiguous slices of a global trigger, sizes differing by at most one."""
    if n_parts < 1:
        raise ConfigError("n_parts must be >= 1")
    if n_parts > max(trigger.tri_size, 1):
        raise ConfigError("more parts than trigger pixels")
    chunks = np.array_split(np.arange(trigger.tri_size), n_parts)
    return [Trigger(trigger.placements[c], trigger.values[c], trigger.target_label) for c in chunks]


# ---------------------------------------------------------------------------
# text format: target label, tri_size, then "index value" per placement


def format_trigger(trigger: Trigger) -> str:
    lines = [str(trigger.target_label), str(trigger.tri_size)]
    lines += [f"{i} {v:.17g}" for i, v in zip(trigger.placements, trigger.values)]
    return "\n".join(lines) + "\n"


def parse_trigger(text: str) -> Trigger:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        target = int(lines[0])
        size = int(lines[1])
        pairs = [ln.split() for ln in lines[2:]]
        idx = [int(p[0]) for p in pairs]
        vals = [float(p[1]) for p in pairs]
    except (IndexError, ValueError) as exc:
        raise FormatError(f"bad trigger text: {exc}") from exc
    if len(idx) != size:
        raise FormatError(f"trigger declares {size} placements, found {len(idx)}")
    return Trigger(np.array(idx, dtype=np.int64), np.array(vals), target)
