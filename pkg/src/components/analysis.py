"""
Held-out evaluation and representation-diversity profiling.

A profile reduces each channel of one layer's feature maps to its spatial
maximum (global max pooling) for the first K samples, then histograms the
values. Two scalar summaries make profiles comparable: the fraction of
exact zeros and the histogram entropy normalized by log(bins).
"""
import csv
import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from src.core.errors import ContractError, ShapeError
from src.components.network import forward_activations, infer_shapes, predict

DEFAULT_BINS = 50


@dataclass(frozen=True)
class EvalReport:
    split: str
    accuracy: float
    per_class: dict
    count: int
    correct: int

    def to_dict(self):
        return {
            "split": self.split,
            "accuracy": self.accuracy,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "count": self.count,
            "correct": self.correct,
        }


def predictions(model, dataset, batch_size=256):
    """Predicted class per sample on the normalized, un-augmented split"""
    out = []
    for start in range(0, len(dataset), batch_size):
        indices = np.arange(start, min(start + batch_size, len(dataset)))
        out.append(predict(model, dataset.normalized(indices)))
    return np.concatenate(out)


def evaluate(model, dataset, split=None, batch_size=256):
    """Exact counting accuracy, overall and per class"""
    if len(dataset) < 1:
        raise ContractError("cannot evaluate on an empty split")
    predicted = predictions(model, dataset, batch_size)
    hits = predicted == dataset.labels
    per_class = {}
    for label in np.unique(dataset.labels):
        mask = dataset.labels == label
        per_class[int(label)] = float(hits[mask].sum() / mask.sum())
    correct = int(hits.sum())
    return EvalReport(split or dataset.name, correct / len(dataset), per_class, len(dataset), correct)


@dataclass(frozen=True)
class ActivationProfile:
    layer: str
    values: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def samples(self):
        return self.values.shape[0]

    @property
    def channels(self):
        return self.values.shape[1]

    @property
    def bins(self):
        return len(self.counts)


def histogram(values, bins=DEFAULT_BINS):
    """
    Histogram over [min(0, lowest value), highest value]; a degenerate
    range is widened to one unit so every value lands in a bin.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    low = min(0.0, float(flat.min()))
    high = float(flat.max())
    if high <= low:
        high = low + 1.0
    counts, edges = np.histogram(flat, bins=bins, range=(low, high))
    return edges, counts


def global_max_pool(feature_maps):
    """[N, C, H, W] -> [N, C] spatial maxima"""
    feature_maps = np.asarray(feature_maps)
    if feature_maps.ndim != 4:
        raise ShapeError(f"global max pooling needs [N, C, H, W] maps, got {feature_maps.shape}")
    return feature_maps.max(axis=(2, 3))


def activation_profile(model, layer_index, images, bins=DEFAULT_BINS, layer_name=None):
    """Channel-wise max-pooled activations of one layer for the given samples"""
    shapes = infer_shapes(model.layers, model.input_shape)
    if not 0 <= layer_index < len(shapes):
        raise ShapeError(f"layer index {layer_index} out of range for {len(shapes)} layers")
    if len(shapes[layer_index]) != 3:
        raise ShapeError(f"layer {layer_index} ({model.layers[layer_index].describe()}) "
                         f"has no spatial extent: output {shapes[layer_index]}")
    outputs = forward_activations(model, images)
    values = global_max_pool(outputs[layer_index])
    edges, counts = histogram(values, bins)
    name = layer_name or f"{layer_index}:{model.layers[layer_index].describe()}"
    return ActivationProfile(name, values, edges, counts)


@dataclass(frozen=True)
class DiversitySummary:
    layer: str
    samples: int
    channels: int
    bins: int
    zero_fraction: float
    entropy: float
    normalized_entropy: float

    def to_dict(self):
        return asdict(self)


def summarize(profile):
    total = profile.counts.sum()
    probs = profile.counts[profile.counts > 0] / total
    entropy = float(-(probs * np.log(probs)).sum())
    if entropy <= 0.0:
        entropy = 0.0
    normalized = entropy / math.log(profile.bins) if profile.bins > 1 else 0.0
    return DiversitySummary(
        layer=profile.layer,
        samples=profile.samples,
        channels=profile.channels,
        bins=profile.bins,
        zero_fraction=float(np.mean(profile.values == 0.0)),
        entropy=entropy,
        normalized_entropy=normalized,
    )


@dataclass(frozen=True)
class ProfileComparison:
    a: DiversitySummary
    b: DiversitySummary
    entropy_difference: float
    zero_fraction_difference: float
    more_diverse: str

    def to_dict(self):
        return {
            "a": self.a.to_dict(),
            "b": self.b.to_dict(),
            "entropy_difference": self.entropy_difference,
            "zero_fraction_difference": self.zero_fraction_difference,
            "more_diverse": self.more_diverse,
        }


def compare_profiles(a, b):
    """
    Diversity summaries of both profiles. Differences are b minus a; a
    profile counts as more diverse when its normalized entropy is higher
    and its zero fraction is not, "undecided" when the two disagree.
    """
    if a.channels != b.channels:
        raise ShapeError(f"profiles have {a.channels} and {b.channels} channels")
    sa, sb = summarize(a), summarize(b)
    entropy_diff = sb.normalized_entropy - sa.normalized_entropy
    zero_diff = sb.zero_fraction - sa.zero_fraction
    if entropy_diff == 0.0 and zero_diff == 0.0:
        verdict = "equal"
    elif entropy_diff >= 0.0 and zero_diff <= 0.0:
        verdict = "b"
    elif entropy_diff <= 0.0 and zero_diff >= 0.0:
        verdict = "a"
    else:
        verdict = "undecided"
    return ProfileComparison(sa, sb, entropy_diff, zero_diff, verdict)


def write_profile_csv(profile, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample", "channel", "value"])
        for sample in range(profile.samples):
            for channel in range(profile.channels):
                writer.writerow([sample, channel, repr(float(profile.values[sample, channel]))])


def write_profile_json(profile, path, extra=None):
    payload = {
        "summary": summarize(profile).to_dict(),
        "histogram": {
            "bin_edges": [float(edge) for edge in profile.bin_edges],
            "counts": [int(count) for count in profile.counts],
        },
    }
    if extra:
        payload.update(extra)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
