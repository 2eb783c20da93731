import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from nrtr import checkpoint, rng as rngmod
from nrtr.errors import IntegrityError, ParseError
from nrtr.gradcheck import tiny_config
from nrtr.model import NRTR


def _state():
    gen = np.random.default_rng(0)
    return {"w": gen.normal(size=(3, 4)).astype(np.float32), "scalar": np.float32(2.5),
            "empty": np.zeros((0, 3), np.float32)}


def test_round_trip_bitwise(tmp_path):
    state = _state()
    checkpoint.save(tmp_path / "a.ckpt", state)
    back = checkpoint.load(tmp_path / "a.ckpt")
    assert list(back) == list(state)
    for k in state:
        assert back[k].shape == np.shape(state[k]) and back[k].tobytes() == np.asarray(state[k]).tobytes()
    assert not (tmp_path / "a.ckpt.tmp").exists()


@given(hnp.arrays(np.float32, hnp.array_shapes(max_dims=3, max_side=5)))
def test_round_trip_property(arr):
    back = checkpoint.decode(checkpoint.encode({"x": arr}))["x"]
    assert back.tobytes() == arr.tobytes()


def test_model_round_trip_rebuilds_architecture():
    model = NRTR.init(tiny_config(), rngmod.stream(1, rngmod.INIT))
    state = checkpoint.decode(checkpoint.encode(model.state_dict()))
    clone = NRTR.from_state_dict(state)
    assert clone.config.d_model == 64 and clone.config.n_enc == 2 and clone.config.d_head == 32
    for (ka, a), (kb, b) in zip(model.named_parameters(), clone.named_parameters()):
        assert ka == kb and np.array_equal(a.data, b.data)


def test_header_layout():
    buf = checkpoint.encode({"ab": np.ones((2, 1), np.float32)})
    assert buf[:4] == b"NRTR"
    assert struct.unpack_from("<II", buf, 4) == (1, 1)
    assert struct.unpack_from("<I", buf, 12) == (2,) and buf[16:18] == b"ab"
    assert len(buf) == 4 + 8 + 4 + 2 + 4 + 16 + 8 + 4


def test_corrupted_payload_detected():
    buf = bytearray(checkpoint.encode(_state()))
    buf[-8] ^= 0x01
    with pytest.raises(IntegrityError, match="checksum"):
        checkpoint.decode(bytes(buf))


def test_truncation_detected():
    buf = checkpoint.encode(_state())
    with pytest.raises(IntegrityError):
        checkpoint.decode(buf[:-3])
    with pytest.raises(ParseError):
        checkpoint.decode(buf[:10])


def test_bad_magic():
    with pytest.raises(ParseError, match="magic"):
        checkpoint.decode(b"XXXX" + bytes(20))


def test_model_tensors_drops_optimizer():
    assert list(checkpoint.model_tensors({"adam.step": 1, "w": 2})) == ["w"]
