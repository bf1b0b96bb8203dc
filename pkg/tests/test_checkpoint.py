import numpy as np
import pytest

from src.core.errors import FormatError
from src.components.checkpoint import (
    MAGIC, RunState, decode_checkpoint, encode_checkpoint, file_digest, load_checkpoint,
    save_checkpoint,
)
from src.components.network import build_model, loss_and_grad
from src.components.optim import init_optimizer, sgd_step


@pytest.fixture
def trained():
    rng = np.random.default_rng(2)
    model = build_model("conv-small", (1, 4, 4), 3, rng, conv_channels=(2, 3))
    opt = init_optimizer(model)
    model, opt = sgd_step(model, opt, loss_and_grad(model, rng.normal(size=(2, 1, 4, 4)), [0, 2])[1], 0.1)
    return model, opt


def _assert_same_params(a, b):
    assert len(a) == len(b)
    for pa, pb in zip(a, b):
        assert set(pa) == set(pb)
        for name in pa:
            assert pa[name].dtype == np.float64
            assert pa[name].tobytes() == pb[name].tobytes()


def test_round_trip_is_bit_exact(tmp_path, trained):
    model, opt = trained
    path = str(tmp_path / "model.lxgd")
    save_checkpoint(path, model, opt, RunState(7, 123456789012345, 2**40 + 3))
    loaded = load_checkpoint(path)
    assert loaded.model.layers == model.layers
    assert loaded.model.input_shape == model.input_shape
    assert loaded.model.num_classes == 3
    _assert_same_params(loaded.model.params, model.params)
    _assert_same_params(loaded.opt.velocity, opt.velocity)
    assert loaded.opt.momentum == opt.momentum
    assert loaded.opt.step_counter == 1
    assert loaded.run_state == RunState(7, 123456789012345, 2**40 + 3)
    assert not (tmp_path / "model.lxgd.partial").exists()


def test_model_only_checkpoint(trained):
    model, _ = trained
    loaded = decode_checkpoint(encode_checkpoint(model))
    assert loaded.opt is None and loaded.run_state is None
    _assert_same_params(loaded.model.params, model.params)


def test_encoding_is_deterministic(tmp_path, trained):
    model, opt = trained
    a, b = str(tmp_path / "a.lxgd"), str(tmp_path / "b.lxgd")
    save_checkpoint(a, model, opt)
    save_checkpoint(b, model.clone(), opt.clone())
    assert file_digest(a) == file_digest(b)
    assert len(file_digest(a)) == 64


def test_bad_magic(trained):
    data = encode_checkpoint(trained[0])
    with pytest.raises(FormatError) as info:
        decode_checkpoint(b"XXXX" + data[4:], "broken.lxgd")
    assert info.value.offset == 0
    assert "broken.lxgd" in str(info.value)


def test_truncated_tensor_data(trained):
    data = encode_checkpoint(*trained)
    with pytest.raises(FormatError) as info:
        decode_checkpoint(data[:-5])
    assert info.value.offset == len(data) - 5
    assert "truncated" in str(info.value)


def test_trailing_bytes(trained):
    data = encode_checkpoint(trained[0])
    with pytest.raises(FormatError) as info:
        decode_checkpoint(data + b"\x00")
    assert info.value.offset == len(data)


def test_unknown_layer_code(trained):
    data = bytearray(encode_checkpoint(trained[0]))
    # header (16) + rank and dims (4 + 12) + layer count (4) -> first layer's kind code
    data[36:40] = (99).to_bytes(4, "little")
    with pytest.raises(FormatError) as info:
        decode_checkpoint(bytes(data))
    assert info.value.offset == 36


def test_magic_constant():
    assert MAGIC == b"LXGD"
