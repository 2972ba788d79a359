"""Bit-exact binary checkpoints.

Layout (little-endian):
    magic "AFCK" | version u16 | meta_len u32 | meta JSON
    | layer_count u32 | per layer: desc_len u32 + desc JSON
    | parameter payload, raw float64 in layer order
    | crc32 u32 over everything before it
"""

import json
import struct
import zlib

import numpy as np

from .errors import ChecksumMismatch, TruncatedCheckpoint, UnsupportedVersion
from .network import Add, Conv2D, Dense, GlobalAvgPool, MaxPool2D, NetworkSpec, ReLU, Softmax

MAGIC = b"AFCK"
VERSION = 1


def _describe(layer):
    if layer.kind == "conv":
        return {
            "kind": "conv",
            "stride": layer.stride,
            "pad": layer.pad,
            "weight": list(layer.weight.shape),
            "bias": list(layer.bias.shape),
        }
    if layer.kind == "dense":
        return {"kind": "dense", "weight": list(layer.weight.shape), "bias": list(layer.bias.shape)}
    if layer.kind == "maxpool":
        return {"kind": "maxpool", "size": layer.size, "stride": layer.stride}
    if layer.kind == "add":
        return {"kind": "add", "skip_from": layer.skip_from}
    return {"kind": layer.kind}


def _rebuild(desc, dtype):
    kind = desc["kind"]
    if kind == "conv":
        return Conv2D(
            np.zeros(desc["weight"], dtype=dtype),
            np.zeros(desc["bias"], dtype=dtype),
            stride=desc["stride"],
            pad=desc["pad"],
        )
    if kind == "dense":
        return Dense(np.zeros(desc["weight"], dtype=dtype), np.zeros(desc["bias"], dtype=dtype))
    if kind == "maxpool":
        return MaxPool2D(size=desc["size"], stride=desc["stride"])
    if kind == "add":
        return Add(skip_from=desc["skip_from"])
    if kind == "relu":
        return ReLU()
    if kind == "gap":
        return GlobalAvgPool()
    if kind == "softmax":
        return Softmax()
    raise UnsupportedVersion(f"unknown layer kind {kind!r} in checkpoint")


def checkpoint_bytes(net):
    meta = {
        "input_shape": list(net.input_shape),
        "classes": net.num_classes,
        "dtype": np.dtype(net.dtype).name,
        "cam_node": net.cam_node,
        "meta": net.meta,
    }
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(meta_blob)), meta_blob]
    out.append(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        blob = json.dumps(_describe(layer), sort_keys=True).encode()
        out.append(struct.pack("<I", len(blob)))
        out.append(blob)
    for p in net.param_arrays():
        out.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(net, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(net))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise TruncatedCheckpoint(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.blob)}"
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk


def load_checkpoint(path):
    """Rebuild a NetworkSpec; forward outputs of load(save(net)) are
    bit-identical to the original."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10:
        raise TruncatedCheckpoint(f"file has only {len(blob)} bytes")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumMismatch("checkpoint checksum does not match contents")

    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise UnsupportedVersion("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<H", r.take(2))
    if version != VERSION:
        raise UnsupportedVersion(f"checkpoint version {version} not supported")
    (meta_len,) = struct.unpack("<I", r.take(4))
    meta = json.loads(r.take(meta_len))
    dtype = np.dtype(meta["dtype"]).type
    (n_layers,) = struct.unpack("<I", r.take(4))
    layers = []
    for _ in range(n_layers):
        (dlen,) = struct.unpack("<I", r.take(4))
        layers.append(_rebuild(json.loads(r.take(dlen)), dtype))
    for layer in layers:
        for p in layer.params():
            raw = np.frombuffer(r.take(p.size * 8), dtype="<f8").reshape(p.shape)
            p[...] = raw.astype(dtype)
    if r.pos != len(body):
        raise TruncatedCheckpoint(f"{len(body) - r.pos} unexpected trailing bytes")
    return NetworkSpec(
        layers=layers,
        input_shape=tuple(meta["input_shape"]),
        num_classes=meta["classes"],
        dtype=dtype,
        cam_node=meta["cam_node"],
        meta=meta.get("meta", {}),
    )
