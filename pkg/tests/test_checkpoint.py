import struct
import zlib

import numpy as np
import pytest

import gradlens as gl
from gradlens.checkpoint import MAGIC, checkpoint_bytes
from gradlens.errors import ChecksumMismatch, TruncatedCheckpoint, UnsupportedVersion


@pytest.fixture
def net():
    return gl.build_mini_resnet((8, 8, 3), classes=3, blocks=1, channels=4, seed=5)


def test_round_trip_forward_bit_identical(net, tmp_path):
    path = tmp_path / "model.afck"
    gl.save_checkpoint(net, path)
    loaded = gl.load_checkpoint(path)
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.uniform(0, 1, (8, 8, 3))
        assert np.array_equal(
            np.asarray(gl.forward(net, x)), np.asarray(gl.forward(loaded, x))
        )


def test_round_trip_parameters_bitwise(net, tmp_path):
    path = tmp_path / "model.afck"
    gl.save_checkpoint(net, path)
    loaded = gl.load_checkpoint(path)
    for a, b in zip(net.param_arrays(), loaded.param_arrays()):
        assert np.array_equal(a, b)
    assert loaded.cam_node == net.cam_node
    assert loaded.input_shape == net.input_shape


def test_corrupted_byte_raises_checksum_error(net, tmp_path):
    blob = bytearray(checkpoint_bytes(net))
    blob[len(blob) // 2] ^= 0xFF
    path = tmp_path / "bad.afck"
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumMismatch):
        gl.load_checkpoint(path)


def test_unknown_version_rejected(net, tmp_path):
    blob = bytearray(checkpoint_bytes(net))[:-4]
    struct.pack_into("<H", blob, 4, 255)  # version field follows the magic
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    path = tmp_path / "v255.afck"
    path.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedVersion):
        gl.load_checkpoint(path)


def test_bad_magic_rejected(net, tmp_path):
    blob = bytearray(checkpoint_bytes(net))[:-4]
    blob[:4] = b"NOPE"
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    path = tmp_path / "magic.afck"
    path.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedVersion):
        gl.load_checkpoint(path)


def test_truncated_payload_detected(net, tmp_path):
    blob = bytearray(checkpoint_bytes(net))[:-4]
    blob = blob[:-16]  # drop parameter bytes but keep a valid checksum
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    path = tmp_path / "short.afck"
    path.write_bytes(bytes(blob))
    with pytest.raises(TruncatedCheckpoint):
        gl.load_checkpoint(path)


def test_tiny_file_rejected(tmp_path):
    path = tmp_path / "stub.afck"
    path.write_bytes(MAGIC)
    with pytest.raises(TruncatedCheckpoint):
        gl.load_checkpoint(path)


def test_chopped_file_fails_checksum(net, tmp_path):
    blob = checkpoint_bytes(net)
    path = tmp_path / "chop.afck"
    path.write_bytes(blob[: len(blob) - 9])
    with pytest.raises((ChecksumMismatch, TruncatedCheckpoint)):
        gl.load_checkpoint(path)


def test_float32_network_round_trips(tmp_path):
    net = gl.build_mini_resnet((8, 8, 3), classes=3, blocks=1, channels=4,
                               seed=5, dtype=np.float32)
    path = tmp_path / "f32.afck"
    gl.save_checkpoint(net, path)
    loaded = gl.load_checkpoint(path)
    assert loaded.dtype == np.float32
    for a, b in zip(net.param_arrays(), loaded.param_arrays()):
        assert a.dtype == b.dtype == np.float32
        assert np.array_equal(a, b)
