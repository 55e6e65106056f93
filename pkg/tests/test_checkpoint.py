import struct

import numpy as np
import pytest

from token_transformer.checkpoint import MAGIC, decode, encode, load_checkpoint, save_checkpoint
from token_transformer.config import preset
from token_transformer.errors import (
    BadMagicError,
    CheckpointError,
    ConfigMismatchError,
    CorruptCheckpointError,
    DataError,
    ShapeMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from token_transformer.model import build
from token_transformer.optim import AdamW
from token_transformer.tensor import no_grad

NANO = preset("tt-nano")


@pytest.fixture(scope="module")
def model():
    return build(NANO, seed=5)


@pytest.fixture(scope="module")
def blob(model):
    return encode(model)


def _images():
    return np.random.default_rng(0).random((2, 3, 32, 32)).astype(np.float32)


def test_round_trip_logits_bitwise(tmp_path, model):
    path = tmp_path / "m.ttc"
    save_checkpoint(path, model)
    loaded, opt = load_checkpoint(path)
    assert opt is None and loaded.cfg == model.cfg
    with no_grad():
        assert model(_images()).data.tobytes() == loaded(_images()).data.tobytes()


def test_save_load_save_byte_identical(tmp_path, model, blob):
    loaded, _ = decode(blob)
    assert encode(loaded) == blob


def test_float64_model_round_trip(model):
    m64 = build(NANO, seed=5, dtype=np.float64)
    loaded, _ = decode(encode(m64))
    assert loaded.params["head.fc.weight"].data.dtype == np.float64
    assert encode(loaded) == encode(m64)


def test_optimizer_state_round_trip():
    m = build(NANO, seed=1)
    opt = AdamW(m.named_parameters(), lr=1e-3)
    for t in m.parameters():
        t.grad = np.full_like(t.data, 0.01)
    opt.step()
    blob = encode(m, opt.state)
    loaded, state = decode(blob)
    assert state.step == 1
    for name in opt.state.m:
        assert np.array_equal(state.m[name], opt.state.m[name])
        assert np.array_equal(state.v[name], opt.state.v[name])
    assert encode(loaded, state) == blob


@pytest.mark.parametrize("cut", [0, 3, 10, 40, 1000, -5, -1])
def test_truncated(blob, cut):
    with pytest.raises(TruncatedCheckpointError) as exc:
        decode(blob[:cut])
    assert exc.value.code == "truncated"


def test_bad_magic(blob):
    with pytest.raises(BadMagicError):
        decode(b"NOTCKP" + blob[len(MAGIC):])


def test_version_mismatch(blob):
    bumped = blob[:len(MAGIC)] + struct.pack("<I", 99) + blob[len(MAGIC) + 4:]
    with pytest.raises(VersionMismatchError):
        decode(bumped)


def test_bit_flip_detected(blob):
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0x10
    with pytest.raises(CorruptCheckpointError):
        decode(bytes(flipped))


def test_trailing_bytes(blob):
    with pytest.raises(CorruptCheckpointError):
        decode(blob + b"\x00")


def test_shape_mismatch():
    m = build(NANO, seed=0)
    m.params["head.fc.bias"].data = np.zeros(7, dtype=np.float32)
    with pytest.raises(ShapeMismatchError) as exc:
        decode(encode(m))
    assert "head.fc.bias" in str(exc.value)


def test_config_mismatch(blob):
    with pytest.raises(ConfigMismatchError) as exc:
        decode(blob, NANO.with_(num_classes=3))
    assert "num_classes" in str(exc.value)
    decode(blob, NANO)


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "absent.ttc")


def test_checkpoint_errors_exit_with_io_code():
    assert CheckpointError.exit_code == 2
