"""
Dataset container plus the per-generation data plumbing: subset
partitioning for subset gradient descent, case sequences for selection,
augmentation, normalization and mini-batching.
"""
from dataclasses import dataclass, replace

import numpy as np

from src.core.errors import ContractError, LabelError, ShapeError


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    means: np.ndarray
    name: str
    num_classes: int
    kind: str = "synthetic"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ShapeError(f"dataset images must be [N, C, H, W], got {self.images.shape}")
        if len(self.images) < 1:
            raise ShapeError(f"dataset {self.name!r} is empty")
        if len(self.labels) != len(self.images):
            raise ShapeError(f"{len(self.labels)} labels for {len(self.images)} images")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise LabelError(f"dataset {self.name!r} has labels outside [0, {self.num_classes})")
        if len(self.means) != self.images.shape[1]:
            raise ShapeError(f"{len(self.means)} channel means for {self.images.shape[1]} channels")

    def __len__(self):
        return len(self.images)

    @property
    def sample_shape(self):
        return tuple(self.images.shape[1:])

    def normalized(self, indices=None):
        """Mean-subtracted images, optionally restricted to ``indices``"""
        images = self.images if indices is None else self.images[indices]
        return normalize(images, self.means)

    def subset(self, indices, name=None):
        """Rows at ``indices``; channel means are kept, not recomputed"""
        indices = np.asarray(indices)
        return replace(self, images=self.images[indices], labels=self.labels[indices],
                       name=name or self.name)

    def with_means(self, means):
        return replace(self, means=np.asarray(means, dtype=np.float64))


def channel_means(images):
    """Per-channel mean of an [N, C, H, W] array"""
    return images.mean(axis=(0, 2, 3))


def make_dataset(images, labels, name, num_classes=None, kind="synthetic", means=None):
    """Build a Dataset; channel means come from these images unless given"""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 1
    if means is None:
        means = channel_means(images)
    return Dataset(images, labels, np.asarray(means, dtype=np.float64), name, int(num_classes), kind)


@dataclass(frozen=True)
class SubsetPartition:
    assignments: tuple

    def __len__(self):
        return len(self.assignments)

    def sizes(self):
        return [len(indices) for indices in self.assignments]


def partition(n, p, rng):
    """
    Split a random permutation of range(n) into p disjoint subsets.

    Sizes differ by at most one; the extra samples go to the
    lowest-indexed subsets.
    """
    if p < 1:
        raise ContractError(f"population size must be >= 1, got {p}")
    if p > n:
        raise ContractError(f"cannot split {n} samples into {p} non-empty subsets")
    order = rng.permutation(n)
    base, extra = divmod(n, p)
    assignments = []
    start = 0
    for i in range(p):
        size = base + (1 if i < extra else 0)
        assignments.append(order[start:start + size])
        start += size
    return SubsetPartition(tuple(assignments))


@dataclass(frozen=True)
class CaseSequence:
    order: np.ndarray

    def __len__(self):
        return len(self.order)

    def truncated(self, limit):
        if limit is None or limit >= len(self.order):
            return self
        return CaseSequence(self.order[:limit])


def shuffle_cases(n, rng):
    """Uniform random permutation of range(n) (Fisher-Yates via Generator.permutation)"""
    if n < 1:
        raise ContractError(f"need at least one case, got {n}")
    return CaseSequence(rng.permutation(n))


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = False
    crop_padding: int = 4
    hflip_prob: float = 0.5

    def __post_init__(self):
        if self.crop_padding < 0:
            raise ContractError(f"crop_padding must be >= 0, got {self.crop_padding}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ContractError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")


# Natural images get crop + flip; digits lose meaning when mirrored;
# flat feature rows are not images at all.
AUGMENT_DEFAULTS = {
    "cifar10": AugmentConfig(True, 4, 0.5),
    "idx": AugmentConfig(True, 4, 0.0),
    "csv": AugmentConfig(False, 0, 0.0),
    "two-moons": AugmentConfig(False, 0, 0.0),
    "gaussian-blobs": AugmentConfig(False, 0, 0.0),
}


def augment_config_for(kind, enabled=None, crop_padding=None, hflip_prob=None):
    """Dataset-kind default, with any explicitly given field overriding it"""
    base = AUGMENT_DEFAULTS.get(kind, AugmentConfig())
    return AugmentConfig(
        enabled=base.enabled if enabled is None else bool(enabled),
        crop_padding=base.crop_padding if crop_padding is None else crop_padding,
        hflip_prob=base.hflip_prob if hflip_prob is None else hflip_prob,
    )


def augment(image, cfg, rng):
    """
    Random crop of the zero-padded image back to its own size, then a
    horizontal mirror with probability ``hflip_prob``.

    Always draws the same number of random values so that the stream stays
    aligned whatever the outcome.
    """
    if not cfg.enabled:
        return image.copy()
    if image.ndim != 3:
        raise ShapeError(f"augment expects a (C, H, W) image, got {image.shape}")
    pad = cfg.crop_padding
    _, height, width = image.shape
    dy, dx = rng.integers(0, 2 * pad + 1, size=2)
    flip = rng.random() < cfg.hflip_prob
    if pad:
        padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
        out = padded[:, dy:dy + height, dx:dx + width]
    else:
        out = image
    if flip:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def augment_batch(images, cfg, rng):
    if not cfg.enabled:
        return images
    return np.stack([augment(image, cfg, rng) for image in images])


def normalize(image, means):
    """Subtract the per-channel mean; works on (C, H, W) and (N, C, H, W)"""
    image = np.asarray(image, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    if image.ndim < 3 or image.shape[-3] != len(means):
        raise ShapeError(f"{len(means)} channel means for image of shape {image.shape}")
    return image - means[:, None, None]


def iter_minibatches(indices, batch_size):
    """Consecutive chunks of ``indices``; the last one may be short"""
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    for start in range(0, len(indices), batch_size):
        yield indices[start:start + batch_size]


def steps_per_subset(size, batch_size):
    return -(-size // batch_size)
