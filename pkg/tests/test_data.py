import struct
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpotsim.data import (Dataset, PartitionSpec, concat, generate_synthetic, load_idx, partition_noniid,
                          save_idx, train_test_split)
from dpotsim.errors import ConfigError, ConsistencyError, FormatError, ShapeError, TruncatedFileError


def test_synthetic_is_seeded_balanced_and_in_range():
    a = generate_synthetic(5, 12, (6, 6), 0.5, seed=3)
    b = generate_synthetic(5, 12, (6, 6), 0.5, seed=3)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert a.images.min() >= 0 and a.images.max() <= 1
    assert Counter(a.labels.tolist()) == {c: 12 for c in range(5)}
    assert not np.array_equal(a.images, generate_synthetic(5, 12, (6, 6), 0.5, seed=4).images)


def test_noise_free_images_equal_class_templates():
    d = generate_synthetic(3, 4, (6, 6), 0.0, seed=1)
    for c in range(3):
        imgs = d.images[d.labels == c]
        assert np.all(imgs == imgs[0])
        assert set(np.unique(imgs)) <= {0.0, 1.0}


@pytest.mark.parametrize("kw", [dict(per_class=0), dict(noise_sigma=-1.0), dict(template_density=0.0)])
def test_synthetic_rejects(kw):
    args = dict(n_classes=3, per_class=2, image_shape=(6, 6), noise_sigma=0.1, seed=0)
    args.update(kw)
    with pytest.raises(ConfigError):
        generate_synthetic(**args)


def test_dataset_validates():
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 4)), np.zeros(2, dtype=int), 2)
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 2, 2)), np.zeros(3, dtype=int), 2)
    with pytest.raises(ConfigError):
        Dataset(np.zeros((1, 2, 2)), np.array([5]), 2)


def test_train_test_split_is_a_partition(small_synth):
    tr, te = train_test_split(small_synth, 0.25, 0)
    assert len(tr) + len(te) == len(small_synth) and len(te) == 30
    both = concat([tr, te])
    key = lambda d: sorted(map(bytes, d.images.reshape(len(d), -1)))  # noqa: E731
    assert key(both) == key(small_synth)


def test_idx_roundtrip_bit_exact(tmp_path):
    d = generate_synthetic(3, 5, (4, 7), 0.3, seed=2)
    save_idx(d, tmp_path / "i", tmp_path / "l")
    raw = (tmp_path / "i").read_bytes()
    assert raw[:16] == struct.pack(">IIII", 0x803, 15, 4, 7)
    assert (tmp_path / "l").read_bytes()[:8] == struct.pack(">II", 0x801, 15)
    back = load_idx(tmp_path / "i", tmp_path / "l", 3)
    assert np.array_equal(back.labels, d.labels)
    assert np.max(np.abs(back.images - d.images)) <= 0.5 / 255 + 1e-12
    save_idx(back, tmp_path / "i2", tmp_path / "l2")
    assert (tmp_path / "i2").read_bytes() == raw


def test_idx_errors(tmp_path):
    d = generate_synthetic(2, 3, (6, 6), 0.1, seed=0)
    save_idx(d, tmp_path / "i", tmp_path / "l")
    with pytest.raises(FormatError):
        load_idx(tmp_path / "l", tmp_path / "l")
    (tmp_path / "t").write_bytes((tmp_path / "i").read_bytes()[:-1])
    with pytest.raises(TruncatedFileError):
        load_idx(tmp_path / "t", tmp_path / "l")
    (tmp_path / "l3").write_bytes(struct.pack(">II", 0x801, 3) + bytes(3))
    with pytest.raises(ConsistencyError):
        load_idx(tmp_path / "i", tmp_path / "l3")
    with pytest.raises(OSError):
        load_idx(tmp_path / "missing", tmp_path / "l")


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 25), st.floats(0.25, 1.0), st.integers(0, 1000))
def test_partition_conserves_examples(n_clients, bias, seed):
    d = generate_synthetic(4, 10, (6, 6), 0.2, seed=1)
    parts = partition_noniid(d, PartitionSpec(n_clients, bias, seed))
    assert len(parts) == n_clients
    assert sum(len(p) for p in parts) == len(d)
    pooled = sorted(map(bytes, np.concatenate([p.images for p in parts]).reshape(len(d), -1)))
    assert pooled == sorted(map(bytes, d.images.reshape(len(d), -1)))


def test_partition_bias_one_puts_each_class_in_its_group():
    d = generate_synthetic(4, 20, (6, 6), 0.2, seed=1)
    parts = partition_noniid(d, PartitionSpec(8, 1.0, 0))
    for k, p in enumerate(parts):
        assert set(p.labels.tolist()) <= {k % 4}


def test_partition_bias_frequency():
    d = generate_synthetic(4, 500, (6, 6), 0.1, seed=1)
    parts = partition_noniid(d, PartitionSpec(4, 0.7, 0))
    share = np.mean(parts[0].labels == 0) if len(parts[0]) else 0
    in_group = np.sum(parts[0].labels == 0) / 500
    assert abs(in_group - 0.7) < 0.06 and share > 0.5


def test_partition_is_seeded():
    d = generate_synthetic(4, 10, (6, 6), 0.2, seed=1)
    a = partition_noniid(d, PartitionSpec(6, 0.5, 3))
    b = partition_noniid(d, PartitionSpec(6, 0.5, 3))
    assert all(np.array_equal(x.labels, y.labels) and np.array_equal(x.images, y.images) for x, y in zip(a, b))


def test_partition_rejects_bad_bias():
    d = generate_synthetic(4, 3, (6, 6), 0.2, seed=1)
    with pytest.raises(ConfigError):
        partition_noniid(d, PartitionSpec(4, 0.1, 0))
