"""
Minimal feed-forward network engine.

Models are plain values: an ordered tuple of ``LayerSpec`` plus one dict of
float64 parameter arrays per layer (empty for parameter-free layers).
Tensors are numpy arrays laid out as [batch, features] or
[batch, channels, height, width]. Gradients share the parameter layout: a
tuple with one ``{"weight": ..., "bias": ...}`` dict per layer.
"""
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.core.errors import ContractError, LabelError, NonFiniteError, ShapeError

DENSE = "dense"
RELU = "relu"
CONV2D = "conv2d"
MAXPOOL2D = "maxpool2d"
FLATTEN = "flatten"
LAYER_KINDS = (DENSE, RELU, CONV2D, MAXPOOL2D, FLATTEN)
PARAM_NAMES = ("weight", "bias")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    window: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"Unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ShapeError(f"{self.kind}: stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"{self.kind}: padding must be >= 0, got {self.padding}")
        if self.kind == DENSE and (self.in_features < 1 or self.out_features < 1):
            raise ShapeError(f"dense: widths must be >= 1, got {self.in_features}->{self.out_features}")
        if self.kind == CONV2D:
            if self.kernel_size < 1:
                raise ShapeError(f"conv2d: kernel size must be >= 1, got {self.kernel_size}")
            if self.in_channels < 1 or self.out_channels < 1:
                raise ShapeError("conv2d: channel counts must be >= 1")
        if self.kind == MAXPOOL2D and self.window < 1:
            raise ShapeError(f"maxpool2d: window must be >= 1, got {self.window}")

    @property
    def parametric(self):
        return self.kind in (DENSE, CONV2D)

    def param_shapes(self):
        if self.kind == DENSE:
            return {"weight": (self.out_features, self.in_features), "bias": (self.out_features,)}
        if self.kind == CONV2D:
            k = self.kernel_size
            return {
                "weight": (self.out_channels, self.in_channels, k, k),
                "bias": (self.out_channels,),
            }
        return {}

    def fans(self):
        """(fan_in, fan_out) used by the uniform initializer"""
        if self.kind == DENSE:
            return self.in_features, self.out_features
        if self.kind == CONV2D:
            area = self.kernel_size * self.kernel_size
            return self.in_channels * area, self.out_channels * area
        return 0, 0

    def output_shape(self, input_shape):
        """Per-sample output shape for a per-sample input shape"""
        shape = tuple(input_shape)
        if self.kind == DENSE:
            if shape != (self.in_features,):
                raise ShapeError(f"dense expects input ({self.in_features},), got {shape}")
            return (self.out_features,)
        if self.kind == RELU:
            return shape
        if self.kind == FLATTEN:
            return (int(np.prod(shape)),)
        if len(shape) != 3:
            raise ShapeError(f"{self.kind} expects a (channels, height, width) input, got {shape}")
        channels, height, width = shape
        if self.kind == CONV2D:
            if channels != self.in_channels:
                raise ShapeError(f"conv2d expects {self.in_channels} input channels, got {channels}")
            k, s, p = self.kernel_size, self.stride, self.padding
            if height + 2 * p < k or width + 2 * p < k:
                raise ShapeError(f"conv2d kernel {k} does not fit padded input {height}x{width} (padding {p})")
            return (self.out_channels, (height + 2 * p - k) // s + 1, (width + 2 * p - k) // s + 1)
        w, s = self.window, self.stride
        if height < w or width < w:
            raise ShapeError(f"maxpool2d window {w} does not fit input {height}x{width}")
        return (channels, (height - w) // s + 1, (width - w) // s + 1)

    def describe(self):
        if self.kind == DENSE:
            return f"dense({self.in_features}->{self.out_features})"
        if self.kind == CONV2D:
            return (f"conv2d({self.in_channels}->{self.out_channels}, k={self.kernel_size}, "
                    f"s={self.stride}, p={self.padding})")
        if self.kind == MAXPOOL2D:
            return f"maxpool2d(w={self.window}, s={self.stride})"
        return self.kind


def dense(in_features, out_features):
    return LayerSpec(DENSE, in_features=in_features, out_features=out_features)


def relu():
    return LayerSpec(RELU)


def conv2d(in_channels, out_channels, kernel_size=3, stride=1, padding=0):
    return LayerSpec(CONV2D, in_channels=in_channels, out_channels=out_channels,
                     kernel_size=kernel_size, stride=stride, padding=padding)


def maxpool2d(window=2, stride=None):
    return LayerSpec(MAXPOOL2D, window=window, stride=window if stride is None else stride)


def flatten():
    return LayerSpec(FLATTEN)


def infer_shapes(layers, input_shape):
    """Output shape of every layer in the chain; raises ShapeError on the first mismatch"""
    shapes = []
    shape = tuple(input_shape)
    for index, spec in enumerate(layers):
        try:
            shape = spec.output_shape(shape)
        except ShapeError as e:
            raise ShapeError(f"layer {index} ({spec.describe()}): {e}") from None
        shapes.append(shape)
    return shapes


@dataclass(frozen=True)
class ModelState:
    layers: tuple
    params: tuple
    num_classes: int
    input_shape: tuple

    def __post_init__(self):
        if len(self.params) != len(self.layers):
            raise ShapeError(f"{len(self.layers)} layers but {len(self.params)} parameter sets")
        shapes = infer_shapes(self.layers, self.input_shape)
        if not shapes or shapes[-1] != (self.num_classes,):
            final = shapes[-1] if shapes else tuple(self.input_shape)
            raise ShapeError(f"network output {final} does not match {self.num_classes} classes")
        for index, (spec, layer_params) in enumerate(zip(self.layers, self.params)):
            expected = spec.param_shapes()
            if set(layer_params) != set(expected):
                raise ShapeError(f"layer {index} ({spec.describe()}) has parameters "
                                 f"{sorted(layer_params)}, expected {sorted(expected)}")
            for name, shape in expected.items():
                if layer_params[name].shape != shape:
                    raise ShapeError(f"layer {index} {name} has shape {layer_params[name].shape}, "
                                     f"expected {shape}")

    def clone(self):
        """Deep copy; the clone shares no arrays with the original"""
        params = tuple({name: array.copy() for name, array in layer.items()} for layer in self.params)
        return ModelState(self.layers, params, self.num_classes, self.input_shape)

    def with_params(self, params):
        return ModelState(self.layers, tuple(params), self.num_classes, self.input_shape)


def iter_params(params):
    """Yield (layer index, parameter name, array) in declaration order"""
    for index, layer_params in enumerate(params):
        for name in PARAM_NAMES:
            if name in layer_params:
                yield index, name, layer_params[name]


def count_params(model):
    return sum(array.size for _, _, array in iter_params(model.params))


def zeros_like_params(params):
    return tuple({name: np.zeros_like(array) for name, array in layer.items()} for layer in params)


def init_params(layers, rng, input_shape=None, num_classes=None):
    """
    Build a ModelState with weights drawn from uniform(-s, s),
    s = sqrt(6 / (fan_in + fan_out)), and zero biases.

    ``input_shape`` may be omitted when the first layer is dense.
    """
    layers = tuple(layers)
    if not layers:
        raise ShapeError("a model needs at least one layer")
    if input_shape is None:
        if layers[0].kind != DENSE:
            raise ShapeError("input_shape is required when the first layer is not dense")
        input_shape = (layers[0].in_features,)
    shapes = infer_shapes(layers, input_shape)
    if len(shapes[-1]) != 1:
        raise ShapeError(f"network must end in a flat class vector, got {shapes[-1]}")
    if num_classes is None:
        num_classes = shapes[-1][0]

    params = []
    for spec in layers:
        layer_params = {}
        if spec.parametric:
            fan_in, fan_out = spec.fans()
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            shapes_by_name = spec.param_shapes()
            layer_params["weight"] = rng.uniform(-bound, bound, size=shapes_by_name["weight"])
            layer_params["bias"] = np.zeros(shapes_by_name["bias"], dtype=np.float64)
        params.append(layer_params)
    return ModelState(layers, tuple(params), int(num_classes), tuple(input_shape))


def mlp_small(input_shape, num_classes, hidden=32):
    """flatten -> dense -> relu -> dense"""
    features = int(np.prod(input_shape))
    return [flatten(), dense(features, hidden), relu(), dense(hidden, num_classes)]


def conv_small(input_shape, num_classes, channels=(8, 16)):
    """
    Two 3x3 conv blocks (conv -> relu -> 2x2 maxpool) then a dense head.

    The pool is left out of a block when the feature map is already
    smaller than the pooling window (tiny synthetic inputs).
    """
    layers = []
    shape = tuple(input_shape)
    in_channels = shape[0]
    for out_channels in channels:
        block = [conv2d(in_channels, out_channels, 3, padding=1), relu()]
        for spec in block:
            shape = spec.output_shape(shape)
        if shape[1] >= 2 and shape[2] >= 2:
            pool = maxpool2d(2)
            shape = pool.output_shape(shape)
            block.append(pool)
        layers.extend(block)
        in_channels = out_channels
    layers.append(flatten())
    layers.append(dense(int(np.prod(shape)), num_classes))
    return layers


def build_model(name, input_shape, num_classes, rng, hidden=32, conv_channels=(8, 16)):
    if name == "mlp-small":
        layers = mlp_small(input_shape, num_classes, hidden)
    elif name == "conv-small":
        if len(input_shape) != 3:
            raise ShapeError(f"conv-small needs (channels, height, width) inputs, got {input_shape}")
        layers = conv_small(input_shape, num_classes, conv_channels)
    else:
        raise ContractError(f"Unknown model {name!r}")
    return init_params(layers, rng, input_shape=input_shape, num_classes=num_classes)


def last_spatial_layer(model):
    """Index of the last layer whose output still has channels and spatial extent"""
    shapes = infer_shapes(model.layers, model.input_shape)
    candidates = [index for index, shape in enumerate(shapes) if len(shape) == 3]
    if not candidates:
        raise ShapeError("model has no layer with spatial feature maps")
    return candidates[-1]


def _forward_layer(spec, layer_params, x):
    if spec.kind == DENSE:
        return x @ layer_params["weight"].T + layer_params["bias"], x
    if spec.kind == RELU:
        return np.maximum(x, 0.0), x
    if spec.kind == FLATTEN:
        return x.reshape(x.shape[0], -1), x.shape
    if spec.kind == CONV2D:
        p, s, k = spec.padding, spec.stride, spec.kernel_size
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        out = np.einsum("bchwij,ocij->bohw", windows, layer_params["weight"], optimize=True)
        out += layer_params["bias"][None, :, None, None]
        return out, (x.shape, windows)
    # maxpool2d
    w, s = spec.window, spec.stride
    windows = sliding_window_view(x, (w, w), axis=(2, 3))[:, :, ::s, ::s]
    flat = windows.reshape(*windows.shape[:4], w * w)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def _backward_layer(spec, layer_params, cache, dout):
    if spec.kind == DENSE:
        x = cache
        grads = {"weight": dout.T @ x, "bias": dout.sum(axis=0)}
        return dout @ layer_params["weight"], grads
    if spec.kind == RELU:
        return dout * (cache > 0), {}
    if spec.kind == FLATTEN:
        return dout.reshape(cache), {}
    if spec.kind == CONV2D:
        x_shape, windows = cache
        p, s, k = spec.padding, spec.stride, spec.kernel_size
        weight = layer_params["weight"]
        grads = {
            "weight": np.einsum("bchwij,bohw->ocij", windows, dout, optimize=True),
            "bias": dout.sum(axis=(0, 2, 3)),
        }
        dwindows = np.einsum("bohw,ocij->bchwij", dout, weight, optimize=True)
        batch, channels, height, width = x_shape
        dpadded = np.zeros((batch, channels, height + 2 * p, width + 2 * p))
        out_h, out_w = dout.shape[2], dout.shape[3]
        for i in range(k):
            for j in range(k):
                dpadded[:, :, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s] += dwindows[..., i, j]
        return dpadded[:, :, p:p + height, p:p + width], grads
    # maxpool2d: gradient routed to the first maximum of each window
    x_shape, arg = cache
    w, s = spec.window, spec.stride
    dx = np.zeros(x_shape)
    out_h, out_w = dout.shape[2], dout.shape[3]
    for i in range(w):
        for j in range(w):
            routed = dout * (arg == i * w + j)
            dx[:, :, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s] += routed
    return dx, {}


def _check_batch(model, batch):
    batch = np.asarray(batch, dtype=np.float64)
    expected = tuple(model.input_shape)
    if batch.ndim != len(expected) + 1 or batch.shape[1:] != expected:
        raise ShapeError(f"batch of shape {batch.shape} does not match model input "
                         f"[batch, {', '.join(str(d) for d in expected)}]")
    return batch


def _run(model, batch, keep_caches=False, check_finite=False):
    x = _check_batch(model, batch)
    outputs, caches = [], []
    for index, (spec, layer_params) in enumerate(zip(model.layers, model.params)):
        x, cache = _forward_layer(spec, layer_params, x)
        if check_finite and not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite activations in layer {index} ({spec.describe()})",
                                 where=index)
        outputs.append(x)
        if keep_caches:
            caches.append(cache)
    return outputs, caches


def forward(model, batch):
    """Logits of shape [batch, num_classes]; pure in (model, batch)"""
    outputs, _ = _run(model, batch)
    return outputs[-1]


def forward_activations(model, batch):
    """Output of every layer, in order"""
    outputs, _ = _run(model, batch)
    return outputs


def predict(model, batch):
    """Argmax class per sample; ties go to the lowest class index"""
    return np.argmax(forward(model, batch), axis=1)


def softmax_cross_entropy(logits, labels):
    """
    Mean softmax cross-entropy and its gradient w.r.t. the logits.

    The logit gradient is (softmax - onehot) / batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    batch = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(batch)
    losses = log_norm - shifted[rows, labels]
    probs = np.exp(shifted - log_norm[:, None])
    dlogits = probs
    dlogits[rows, labels] -= 1.0
    return float(losses.mean()), dlogits / batch


def loss_and_grad(model, batch, labels):
    """Mean softmax cross-entropy over the batch and its parameter gradients"""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch = _check_batch(model, batch)
    if batch.shape[0] == 0:
        raise ShapeError("loss_and_grad needs a non-empty batch")
    if labels.shape[0] != batch.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for a batch of {batch.shape[0]}")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        bad = int(labels[(labels < 0) | (labels >= model.num_classes)][0])
        raise LabelError(f"label {bad} out of range [0, {model.num_classes})")

    outputs, caches = _run(model, batch, keep_caches=True, check_finite=True)
    loss, dout = softmax_cross_entropy(outputs[-1], labels)

    grads = [None] * len(model.layers)
    for index in reversed(range(len(model.layers))):
        dout, layer_grads = _backward_layer(model.layers[index], model.params[index], caches[index], dout)
        grads[index] = layer_grads
    return loss, tuple(grads)
