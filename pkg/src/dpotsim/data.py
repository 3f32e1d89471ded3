"""Datasets: synthetic template images, IDX files, and non-IID client splits."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConsistencyError, FormatError, ShapeError, TruncatedFileError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Grayscale images in [0, 1] with integer labels.

    ``images`` has shape ``(N, H, W)`` and ``labels`` shape ``(N,)``.
    """

    images: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.images.ndim != 3:
            raise ShapeError("images must be (N, H, W)")
        if self.labels.shape != (self.images.shape[0],):
            raise ShapeError("labels must align with images")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigError("label outside [0, n_classes)")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    @property
    def flat_images(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx].copy(), self.labels[idx].copy(), self.n_classes)


def empty_dataset(n_classes: int, image_shape) -> Dataset:
    return Dataset(np.zeros((0, *image_shape)), np.zeros(0, dtype=np.int64), n_classes)


def concat(datasets) -> Dataset:
    datasets = list(datasets)
    return Dataset(
        np.concatenate([d.images for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        datasets[0].n_classes,
    )


def class_templates(n_classes: int, image_shape, seed: int, density: float = 0.2) -> np.ndarray:
    """One binary template per class: a random ``density`` share of pixels lit."""
    rng = np.random.default_rng([seed, 0])
    return (rng.uniform(size=(n_classes, *image_shape)) < density).astype(np.float64)


def generate_synthetic(n_classes, per_class, image_shape=(16, 16), noise_sigma=1.7, seed=0,
                       template_density: float = 0.2) -> Dataset:
    """Template-plus-Gaussian-noise images, clamped to [0, 1], in seeded order.

    Templates depend only on ``(n_classes, image_shape, seed, template_density)``;
    the noise is drawn from a separate stream.
    """
    if per_class < 1:
        raise ConfigError("per_class must be >= 1")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be non-negative")
    if not 0.0 < template_density <= 1.0:
        raise ConfigError("template_density must be in (0, 1]")
    image_shape = tuple(image_shape)
    templates = class_templates(n_classes, image_shape, seed, template_density)
    rng = np.random.default_rng([seed, 1])
    labels = np.repeat(np.arange(n_classes), per_class)
    order = rng.permutation(labels.size)
    labels = labels[order]
    noise = rng.normal(0.0, noise_sigma, size=(labels.size, *image_shape)) if noise_sigma > 0 else 0.0
    images = np.clip(templates[labels] + noise, 0.0, 1.0)
    return Dataset(images, labels.astype(np.int64), n_classes)


def train_test_split(dataset: Dataset, test_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(dataset))
    n_test = int(round(test_fraction * len(dataset)))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


# ---------------------------------------------------------------------------
# IDX (MNIST layout): big-endian magic and dims, then raw unsigned bytes


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"{what}: expected {n} bytes, got {len(buf)}")
    return buf


def _read_idx(path, magic, ndim):
    with open(path, "rb") as fh:
        got = struct.unpack(">I", _read_exact(fh, 4, path))[0]
        if got != magic:
            raise FormatError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
        dims = struct.unpack(f">{ndim}I", _read_exact(fh, 4 * ndim, path))
        count = int(np.prod(dims))
        body = _read_exact(fh, count, path)
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), n_classes)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write ``dataset`` as an IDX pair; pixels are quantised to round(255 x)."""
    n, h, w = dataset.images.shape
    pixels = np.rint(np.clip(dataset.images, 0, 1) * 255.0).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + pixels.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int
    bias: float = 0.5
    seed: int = 0


def partition_noniid(dataset: Dataset, spec: PartitionSpec) -> list[Dataset]:
    """Group-biased non-IID split.

    Client ``k`` belongs to group ``k mod C``. An example of class ``c`` goes
    to group ``c`` with probability ``bias`` and to each other group with
    probability ``(1 - bias) / (C - 1)``, then to a uniformly chosen member
    of that group. Examples keep their source order inside each client.
    """
    C = dataset.n_classes
    if len(dataset) == 0:
        raise ConfigError("cannot partition an empty dataset")
    if spec.n_clients < 1:
        raise ConfigError("n_clients must be >= 1")
    if C > 1 and not (1.0 / C - 1e-12 <= spec.bias <= 1.0):
        raise ConfigError(f"bias must lie in [1/C, 1], got {spec.bias}")
    rng = np.random.default_rng(spec.seed)
    n_groups = min(C, spec.n_clients)
    members = [list(range(g, spec.n_clients, C)) for g in range(n_groups)]

    owner = np.empty(len(dataset), dtype=np.int64)
    for i, c in enumerate(dataset.labels):
        if C == 1:
            probs = np.array([1.0])
        else:
            probs = np.full(C, (1.0 - spec.bias) / (C - 1))
            probs[c] = spec.bias
        group = rng.choice(C, p=probs)
        # more classes than clients: fold surplus groups onto existing ones
        group = group % n_groups
        owner[i] = members[group][rng.integers(len(members[group]))]
    return [dataset.subset(np.flatnonzero(owner == k)) for k in range(spec.n_clients)]
