import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.core.errors import ShapeError
from src.components.data import (
    AugmentConfig, augment, augment_batch, augment_config_for, iter_minibatches, make_dataset,
    normalize, partition, shuffle_cases, steps_per_subset,
)


def test_partition_even_split():
    parts = partition(10, 2, np.random.default_rng(0))
    assert parts.sizes() == [5, 5]
    assert sorted(np.concatenate(parts.assignments).tolist()) == list(range(10))


def test_partition_uneven_split():
    assert partition(10, 4, np.random.default_rng(0)).sizes() == [3, 3, 2, 2]
    assert partition(12, 4, np.random.default_rng(0)).sizes() == [3, 3, 3, 3]
    assert partition(5, 1, np.random.default_rng(0)).sizes() == [5]
    assert partition(10, 3, np.random.default_rng(0)).sizes() == [4, 3, 3]
    assert partition(7, 7, np.random.default_rng(0)).sizes() == [1] * 7


def test_partition_rejects_more_subsets_than_samples():
    with pytest.raises(ValueError):
        partition(3, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        partition(3, 0, np.random.default_rng(0))


def test_partition_is_seeded():
    a = partition(50, 4, np.random.default_rng(9))
    b = partition(50, 4, np.random.default_rng(9))
    for x, y in zip(a.assignments, b.assignments):
        np.testing.assert_array_equal(x, y)


@settings(max_examples=1000, deadline=None)
@given(n=st.integers(1, 500), data=st.data(), seed=st.integers(0, 2**32 - 1))
def test_partition_covers_every_index_once(n, data, seed):
    p = data.draw(st.integers(1, n))
    parts = partition(n, p, np.random.default_rng(seed))
    sizes = parts.sizes()
    assert len(sizes) == p
    assert max(sizes) - min(sizes) <= 1
    assert sizes == sorted(sizes, reverse=True)
    np.testing.assert_array_equal(np.sort(np.concatenate(parts.assignments)), np.arange(n))


def test_shuffle_cases_is_a_permutation():
    seq = shuffle_cases(25, np.random.default_rng(1))
    assert len(seq) == 25
    assert sorted(seq.order.tolist()) == list(range(25))
    assert len(seq.truncated(10)) == 10
    assert seq.truncated(None) is seq
    np.testing.assert_array_equal(shuffle_cases(1, np.random.default_rng(1)).order, [0])


def test_shuffle_cases_first_position_is_uniform():
    rng = np.random.default_rng(2024)
    counts = np.bincount([shuffle_cases(10, rng).order[0] for _ in range(10_000)], minlength=10)
    assert counts.min() >= 800
    assert counts.max() <= 1200


def test_shuffle_cases_needs_a_case():
    with pytest.raises(ValueError):
        shuffle_cases(0, np.random.default_rng(0))


def test_augment_disabled_is_identity():
    image = np.arange(12, dtype=np.float64).reshape(1, 3, 4)
    out = augment(image, AugmentConfig(enabled=False), np.random.default_rng(0))
    np.testing.assert_array_equal(out, image)


def test_augment_flip_without_crop():
    image = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    out = augment(image, AugmentConfig(True, crop_padding=0, hflip_prob=1.0), np.random.default_rng(0))
    np.testing.assert_array_equal(out, [[[2.0, 1.0], [4.0, 3.0]]])


def test_augment_crop_offsets_cover_padding():
    # a single lit pixel lands on each of the (2 * pad + 1) ** 2 positions
    image = np.zeros((1, 3, 3))
    image[0, 1, 1] = 1.0
    cfg = AugmentConfig(True, crop_padding=1, hflip_prob=0.0)
    rng = np.random.default_rng(5)
    seen = set()
    for _ in range(500):
        out = augment(image, cfg, rng)
        assert out.shape == image.shape
        assert out.sum() == 1.0
        seen.add(tuple(np.argwhere(out[0])[0]))
    assert len(seen) == 9


def test_augment_is_seeded():
    image = np.random.default_rng(0).normal(size=(3, 4, 4))
    cfg = AugmentConfig(True, 2, 0.5)
    a, b = np.random.default_rng(3), np.random.default_rng(3)
    for _ in range(5):
        np.testing.assert_array_equal(augment(image, cfg, a), augment(image, cfg, b))


def test_augment_batch_keeps_shape():
    images = np.random.default_rng(0).normal(size=(5, 3, 8, 8))
    out = augment_batch(images, AugmentConfig(True, 4, 0.5), np.random.default_rng(1))
    assert out.shape == images.shape


def test_augment_defaults_by_dataset_kind():
    assert augment_config_for("cifar10") == AugmentConfig(True, 4, 0.5)
    assert augment_config_for("idx").hflip_prob == 0.0
    assert not augment_config_for("two-moons").enabled
    assert augment_config_for("two-moons", enabled=True, crop_padding=0).enabled


def test_normalize_subtracts_channel_means():
    image = np.stack([np.full((2, 2), 0.5), np.full((2, 2), 0.25)])
    out = normalize(image, [0.5, 0.0])
    np.testing.assert_array_equal(out[0], 0.0)
    np.testing.assert_array_equal(out[1], 0.25)
    with pytest.raises(ShapeError):
        normalize(image, [0.5])


def test_dataset_means_and_subset():
    images = np.arange(8, dtype=np.float64).reshape(4, 2, 1, 1)
    dataset = make_dataset(images, [0, 1, 0, 1], "toy")
    np.testing.assert_array_equal(dataset.means, [3.0, 4.0])
    part = dataset.subset([0, 1])
    assert len(part) == 2
    np.testing.assert_array_equal(part.means, dataset.means)
    assert dataset.sample_shape == (2, 1, 1)
    with pytest.raises(ValueError):
        make_dataset(images, [0, 1, 0, 5], "toy", num_classes=2)


def test_minibatches():
    chunks = list(iter_minibatches(np.arange(10), 4))
    assert [len(c) for c in chunks] == [4, 4, 2]
    assert steps_per_subset(10, 4) == 3
    assert steps_per_subset(8, 4) == 2
    with pytest.raises(ValueError):
        list(iter_minibatches(np.arange(3), 0))


def test_normalized_training_set_has_zero_channel_means():
    images = np.random.default_rng(4).uniform(size=(64, 3, 5, 5))
    dataset = make_dataset(images, np.zeros(64, dtype=np.int64), "noise")
    np.testing.assert_allclose(dataset.normalized().mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    np.testing.assert_array_equal(normalize(images[0], np.zeros(3)), images[0])
