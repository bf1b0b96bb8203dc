"""
Little-endian binary checkpoints (layout in docs/formats.md).

    "LXGD" | u32 version | u32 flags | u32 num_classes
    u32 rank | rank x u32 input dims
    u32 layer count | per layer 9 x u32 (kind code + hyperparameters)
    f64 parameter tensors in declaration order (weight, bias)
    [flags & 1] f64 momentum | u64 step counter | f64 velocity tensors
    [flags & 2] u32 generation | u64 lineage seed | u64 schedule horizon
"""
import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from src.core.errors import FormatError, ShapeError
from src.components.network import (
    CONV2D, DENSE, FLATTEN, MAXPOOL2D, RELU, LayerSpec, ModelState, iter_params,
)
from src.components.optim import OptimizerState

MAGIC = b"LXGD"
VERSION = 1
FLAG_OPTIMIZER = 1
FLAG_RUN_STATE = 2
KIND_CODES = {DENSE: 1, RELU: 2, CONV2D: 3, MAXPOOL2D: 4, FLATTEN: 5}
CODE_KINDS = {code: kind for kind, code in KIND_CODES.items()}
LAYER_FIELDS = ("in_features", "out_features", "in_channels", "out_channels",
                "kernel_size", "stride", "padding", "window")


@dataclass(frozen=True)
class RunState:
    generation: int
    lineage_seed: int
    horizon: int = 0


@dataclass(frozen=True)
class Checkpoint:
    model: ModelState
    opt: object = None
    run_state: object = None


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size, what):
        if self.offset + size > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}", self.path, len(self.data))
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def tensor(self, shape, what):
        count = int(np.prod(shape))
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def _tensors(params):
    return b"".join(np.ascontiguousarray(array, dtype="<f8").tobytes() for _, _, array in iter_params(params))


def encode_checkpoint(model, opt=None, run_state=None):
    flags = (FLAG_OPTIMIZER if opt is not None else 0) | (FLAG_RUN_STATE if run_state is not None else 0)
    parts = [MAGIC, struct.pack("<III", VERSION, flags, model.num_classes)]
    parts.append(struct.pack(f"<I{len(model.input_shape)}I", len(model.input_shape), *model.input_shape))
    parts.append(struct.pack("<I", len(model.layers)))
    for spec in model.layers:
        parts.append(struct.pack("<9I", KIND_CODES[spec.kind], *(getattr(spec, name) for name in LAYER_FIELDS)))
    parts.append(_tensors(model.params))
    if opt is not None:
        parts.append(struct.pack("<dQ", opt.momentum, opt.step_counter))
        parts.append(_tensors(opt.velocity))
    if run_state is not None:
        parts.append(struct.pack("<IQQ", run_state.generation, run_state.lineage_seed, run_state.horizon))
    return b"".join(parts)


def _read_param_set(reader, layers, what):
    params = []
    for index, spec in enumerate(layers):
        layer_params = {}
        for name, shape in spec.param_shapes().items():
            layer_params[name] = reader.tensor(shape, f"{what} layer {index} {name}")
        params.append(layer_params)
    return tuple(params)


def decode_checkpoint(data, path=None):
    reader = _Reader(data, path)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", path, 0)
    version, flags, num_classes = reader.unpack("<III", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", path, 4)
    (rank,) = reader.unpack("<I", "input rank")
    input_shape = reader.unpack(f"<{rank}I", "input dims")
    (count,) = reader.unpack("<I", "layer count")
    layers = []
    for index in range(count):
        start = reader.offset
        code, *values = reader.unpack("<9I", f"layer {index} spec")
        if code not in CODE_KINDS:
            raise FormatError(f"unknown layer kind code {code}", path, start)
        try:
            layers.append(LayerSpec(CODE_KINDS[code], **dict(zip(LAYER_FIELDS, values))))
        except ShapeError as e:
            raise FormatError(f"invalid layer {index}: {e}", path, start) from None
    layers = tuple(layers)
    params = _read_param_set(reader, layers, "parameters")
    try:
        model = ModelState(layers, params, num_classes, tuple(input_shape))
    except ShapeError as e:
        raise FormatError(f"inconsistent layer table: {e}", path, 0) from None

    opt = None
    if flags & FLAG_OPTIMIZER:
        momentum, steps = reader.unpack("<dQ", "optimizer header")
        opt = OptimizerState(_read_param_set(reader, layers, "velocity"), momentum, steps)
    run_state = None
    if flags & FLAG_RUN_STATE:
        generation, seed, horizon = reader.unpack("<IQQ", "run state")
        run_state = RunState(generation, seed, horizon)
    if reader.offset != len(data):
        raise FormatError(f"{len(data) - reader.offset} trailing bytes", path, reader.offset)
    return Checkpoint(model, opt, run_state)


def save_checkpoint(path, model, opt=None, run_state=None):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    # a reader never sees a half-written file
    partial = path + ".partial"
    with open(partial, "wb") as f:
        f.write(encode_checkpoint(model, opt, run_state))
    os.replace(partial, path)


def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode_checkpoint(f.read(), path)


def file_digest(path):
    """SHA-256 hex digest of a file's bytes"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()
