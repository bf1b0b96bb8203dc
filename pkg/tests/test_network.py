import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.core.errors import LabelError, LexgradError, NonFiniteError, ShapeError
from src.components.network import (
    ModelState, build_model, conv2d, count_params, dense, flatten, forward, forward_activations,
    infer_shapes, init_params, last_spatial_layer, loss_and_grad, maxpool2d, predict, relu,
    softmax_cross_entropy,
)
from tests.conftest import kink_margin, numeric_gradient, relative_error


def _identity_dense(width):
    params = ({"weight": np.eye(width), "bias": np.zeros(width)},)
    return ModelState((dense(width, width),), params, width, (width,))


def test_dense_identity():
    model = _identity_dense(2)
    np.testing.assert_array_equal(forward(model, [[3.0, -1.0]]), [[3.0, -1.0]])


def test_relu_only_model():
    model = ModelState((relu(),), ({},), 3, (3,))
    np.testing.assert_array_equal(forward(model, [[-1.0, 0.0, 2.5]]), [[0.0, 0.0, 2.5]])


def test_conv_of_ones_counts_covered_pixels():
    params = ({"weight": np.ones((1, 1, 3, 3)), "bias": np.zeros(1)}, {})
    model = ModelState((conv2d(1, 1, 3, padding=1), flatten()), params, 9, (1, 3, 3))
    out = forward(model, np.ones((1, 1, 3, 3))).reshape(3, 3)
    np.testing.assert_array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_maxpool_takes_window_maximum():
    params = ({}, {})
    model = ModelState((maxpool2d(2), flatten()), params, 4, (1, 4, 4))
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(forward(model, x), [[5, 7, 13, 15]])


def test_cross_entropy_of_equal_logits():
    loss, dlogits = softmax_cross_entropy(np.array([[0.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    np.testing.assert_allclose(dlogits, [[-0.5, 0.5]], atol=1e-12)


def test_cross_entropy_is_stable_for_large_logits():
    loss, dlogits = softmax_cross_entropy(np.array([[10.0, -10.0]]), np.array([0]))
    assert loss == pytest.approx(2.061153622438558e-09, rel=1e-6)
    assert np.all(np.isfinite(dlogits))
    loss, _ = softmax_cross_entropy(np.array([[1000.0, -1000.0]]), np.array([1]))
    assert loss == pytest.approx(2000.0)


def test_logit_gradient_rows_sum_to_zero(rng):
    logits = rng.normal(size=(5, 4))
    _, dlogits = softmax_cross_entropy(logits, rng.integers(0, 4, size=5))
    np.testing.assert_allclose(dlogits.sum(axis=1), 0.0, atol=1e-15)


def test_predict_ties_go_to_lowest_class():
    model = _identity_dense(3)
    batch = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.5, 0.5, 0.5]])
    np.testing.assert_array_equal(predict(model, batch), [0, 2, 1, 0])


def _gradient_case(kind, seed):
    rng = np.random.default_rng(seed)
    if kind == "dense":
        layers, shape = [dense(4, 3)], (4,)
    elif kind == "relu":
        layers, shape = [dense(4, 5), relu(), dense(5, 3)], (4,)
    elif kind == "conv2d":
        stride, padding = 1 + seed % 2, seed % 2
        layers, shape = [conv2d(2, 3, 3, stride=stride, padding=padding), flatten(), dense(27, 3)], (2, 5, 5)
    elif kind == "maxpool2d":
        layers, shape = [conv2d(1, 2, 3, padding=1), maxpool2d(2), flatten(), dense(8, 3)], (1, 4, 4)
    else:
        layers, shape = [flatten(), dense(12, 3)], (3, 2, 2)
    model = init_params(layers, rng, input_shape=shape, num_classes=3)
    # non-zero biases so their gradients are exercised away from the initial state
    params = [{name: array + (rng.normal(0, 0.1, array.shape) if name == "bias" else 0.0)
               for name, array in layer.items()} for layer in model.params]
    model = model.with_params(params)
    for _ in range(200):
        batch = rng.normal(size=(3,) + shape)
        if kink_margin(model, batch) > 1e-2:
            break
    labels = rng.integers(0, 3, size=3)
    return model, batch, labels


@pytest.mark.parametrize("seed", range(100))
@pytest.mark.parametrize("kind", ["dense", "relu", "conv2d", "maxpool2d", "flatten"])
def test_gradients_match_finite_differences(kind, seed):
    model, batch, labels = _gradient_case(kind, seed)
    _, grads = loss_and_grad(model, batch, labels)
    for index, layer_params in enumerate(model.params):
        for name in layer_params:
            numeric = numeric_gradient(model, batch, labels, index, name)
            assert relative_error(grads[index][name], numeric) <= 1e-3, (index, name)


def test_gradients_share_parameter_layout(rng):
    model = build_model("conv-small", (1, 6, 6), 3, rng, conv_channels=(2, 3))
    _, grads = loss_and_grad(model, rng.normal(size=(2, 1, 6, 6)), [0, 2])
    for layer_params, layer_grads in zip(model.params, grads):
        assert set(layer_params) == set(layer_grads)
        for name in layer_params:
            assert layer_grads[name].shape == layer_params[name].shape


def test_init_is_deterministic_per_seed():
    layers = [dense(5, 4), relu(), dense(4, 2)]
    a = init_params(layers, np.random.default_rng(7))
    b = init_params(layers, np.random.default_rng(7))
    c = init_params(layers, np.random.default_rng(8))
    for pa, pb in zip(a.params, b.params):
        for name in pa:
            np.testing.assert_array_equal(pa[name], pb[name])
    assert not np.array_equal(a.params[0]["weight"], c.params[0]["weight"])


def test_init_bounds_and_zero_bias():
    model = init_params([dense(100, 100)], np.random.default_rng(0))
    weight = model.params[0]["weight"]
    assert np.abs(weight).max() <= math.sqrt(6.0 / 200.0)
    assert np.abs(weight).max() < 0.2449
    np.testing.assert_array_equal(model.params[0]["bias"], 0.0)


def test_forward_is_pure(rng):
    model = build_model("mlp-small", (1, 1, 2), 2, rng, hidden=6)
    batch = rng.normal(size=(4, 1, 1, 2))
    np.testing.assert_array_equal(forward(model, batch), forward(model, batch))
    activations = forward_activations(model, batch)
    assert len(activations) == len(model.layers)
    np.testing.assert_array_equal(activations[-1], forward(model, batch))


def test_chain_mismatch_is_a_shape_error():
    with pytest.raises(ShapeError):
        infer_shapes([dense(3, 4), dense(5, 2)], (3,))
    with pytest.raises(ShapeError):
        init_params([conv2d(3, 4, 3), flatten(), dense(10, 2)], np.random.default_rng(0), (3, 8, 8))


def test_batch_shape_is_checked():
    model = _identity_dense(2)
    with pytest.raises(ShapeError):
        forward(model, np.zeros((1, 3)))


def test_label_out_of_range():
    model = _identity_dense(2)
    with pytest.raises(LabelError, match="label 2") as info:
        loss_and_grad(model, np.zeros((1, 2)), [2])
    assert isinstance(info.value, LexgradError)
    with pytest.raises(LabelError):
        loss_and_grad(model, np.zeros((1, 2)), [-1])


def test_overflow_names_the_layer():
    params = ({"weight": np.full((2, 2), 1e308), "bias": np.zeros(2)},)
    model = ModelState((dense(2, 2),), params, 2, (2,))
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError) as info:
        loss_and_grad(model, np.full((1, 2), 10.0), [0])
    assert info.value.where == 0
    assert "dense(2->2)" in str(info.value)


def test_model_builders(rng):
    mlp = build_model("mlp-small", (1, 1, 2), 2, rng, hidden=32)
    assert count_params(mlp) == 2 * 32 + 32 + 32 * 2 + 2
    conv = build_model("conv-small", (3, 32, 32), 10, rng)
    assert infer_shapes(conv.layers, conv.input_shape)[-1] == (10,)
    assert last_spatial_layer(conv) == 5
    with pytest.raises(ShapeError):
        last_spatial_layer(mlp)
    with pytest.raises(ValueError):
        build_model("resnet", (1, 1, 2), 2, rng)


@settings(max_examples=50, deadline=None)
@given(
    size=st.integers(1, 9),
    kernel=st.integers(1, 4),
    stride=st.integers(1, 3),
    padding=st.integers(0, 2),
    channels=st.integers(1, 3),
)
def test_conv_output_matches_inferred_shape(size, kernel, stride, padding, channels):
    if size + 2 * padding < kernel:
        with pytest.raises(ShapeError):
            conv2d(1, channels, kernel, stride, padding).output_shape((1, size, size))
        return
    layers = [conv2d(1, channels, kernel, stride, padding), flatten()]
    out_shape = infer_shapes(layers, (1, size, size))
    features = out_shape[-1][0]
    model = init_params(layers + [dense(features, 2)], np.random.default_rng(0), (1, size, size))
    activations = forward_activations(model, np.ones((2, 1, size, size)))
    assert activations[0].shape[1:] == out_shape[0]
