import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from src.core.config import RunConfig
from src.components.data import make_dataset
from src.components.loaders import synthetic
from src.components.network import (
    MAXPOOL2D, RELU, forward, forward_activations, softmax_cross_entropy,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def blobs(n=120, seed=3, classes=2, noise=0.5):
    images, labels, num_classes = synthetic("gaussian-blobs", n, seed, classes, noise)
    return make_dataset(images, labels, "blobs", num_classes=num_classes, kind="gaussian-blobs")


def moons(n=400, seed=0, noise=0.1):
    images, labels, num_classes = synthetic("two-moons", n, seed, 2, noise)
    return make_dataset(images, labels, "moons", num_classes=num_classes, kind="two-moons")


@pytest.fixture
def blobs_dataset():
    return blobs()


@pytest.fixture
def moons_dataset():
    return moons()


def run_config(**changes):
    """Small, fast config for loop tests"""
    values = {
        "seed": 1,
        "population": 4,
        "epochs": 2,
        "batch_size": 16,
        "hidden": 8,
        "selection_window": 16,
        "record_train_accuracy": True,
    }
    values.update(changes)
    return RunConfig.from_dict(values)


def numeric_gradient(model, batch, labels, index, name, step=1e-4):
    """Central finite differences of the mean cross-entropy w.r.t. one tensor"""
    base = model.params[index][name]
    grad = np.zeros_like(base)
    for position in np.ndindex(base.shape):
        losses = []
        for sign in (1.0, -1.0):
            perturbed = base.copy()
            perturbed[position] += sign * step
            params = list(model.params)
            params[index] = {**params[index], name: perturbed}
            loss, _ = softmax_cross_entropy(forward(model.with_params(params), batch), labels)
            losses.append(loss)
        grad[position] = (losses[0] - losses[1]) / (2 * step)
    return grad


def relative_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-10)
    return np.linalg.norm(analytic - numeric) / scale


def kink_margin(model, batch):
    """
    Smallest distance of any relu input from zero and of any pooling
    window's runner-up from its maximum. Finite differences are only
    trustworthy when this is well above the step size.
    """
    outputs = forward_activations(model, batch)
    inputs = [np.asarray(batch, dtype=np.float64)] + outputs[:-1]
    margin = np.inf
    for spec, x in zip(model.layers, inputs):
        if spec.kind == RELU:
            margin = min(margin, float(np.abs(x).min()))
        elif spec.kind == MAXPOOL2D:
            w, s = spec.window, spec.stride
            windows = sliding_window_view(x, (w, w), axis=(2, 3))[:, :, ::s, ::s]
            ordered = np.sort(windows.reshape(*windows.shape[:4], w * w), axis=-1)
            margin = min(margin, float((ordered[..., -1] - ordered[..., -2]).min()))
    return margin
