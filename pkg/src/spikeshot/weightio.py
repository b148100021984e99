"""Bit-exact binary weight files.

Layout (little-endian):

    magic   4 bytes  b"SSWF"
    version u16      format version (currently 1)
    n       u16      number of weighted layers
    plen    u16      provenance length, followed by that many UTF-8 bytes
    per layer:
        kind      u8   1=dense 2=conv2d 4=plastic-output
        scale_exp i8
        ndim      u8
        dims      u32 * ndim
        payload   int8 * prod(dims)
    crc     u32      CRC-32 of all payload bytes concatenated

The provenance string records where the frozen weights came from (e.g. the
pretraining class set) and travels with the file; it is advisory only.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

FILE_MAGIC = b"SSWF"
FILE_VERSION = 1

_KIND_TAGS = {"dense": 1, "conv2d": 2, "plastic-output": 4}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


class WeightFileError(ValueError):
    """Corrupt, truncated or mismatched weight file."""


def _layer_arrays(net) -> list[tuple[str, np.ndarray, int]]:
    out = []
    for layer in net.weighted_layers():
        if layer.kind == "plastic-output":
            out.append((layer.kind, layer.store.weights, layer.store.scale_exp))
        else:
            out.append((layer.kind, layer.weights, layer.scale_exp))
    return out


def save_weights(net, path, provenance: str | None = None) -> None:
    """Write every weighted layer of the network, in order."""
    prov = (provenance if provenance is not None else net.provenance).encode("utf-8")
    entries = _layer_arrays(net)
    blob = bytearray()
    blob += FILE_MAGIC
    blob += struct.pack("<HHH", FILE_VERSION, len(entries), len(prov))
    blob += prov
    crc = 0
    for kind, weights, scale_exp in entries:
        payload = np.ascontiguousarray(weights, dtype=np.int8).tobytes()
        blob += struct.pack("<BbB", _KIND_TAGS[kind], scale_exp, weights.ndim)
        blob += struct.pack(f"<{weights.ndim}I", *weights.shape)
        blob += payload
        crc = zlib.crc32(payload, crc)
    blob += struct.pack("<I", crc)
    with open(path, "wb") as f:
        f.write(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFileError("truncated weight file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_weight_file(path) -> tuple[str, list[tuple[str, np.ndarray, int]]]:
    """Parse and checksum a weight file; returns (provenance, layer entries)."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.take(4) != FILE_MAGIC:
        raise WeightFileError("not a weight file (bad magic)")
    version, n_layers, plen = r.unpack("<HHH")
    if version != FILE_VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    provenance = r.take(plen).decode("utf-8")
    entries = []
    crc = 0
    for _ in range(n_layers):
        tag, scale_exp, ndim = r.unpack("<BbB")
        if tag not in _TAG_KINDS:
            raise WeightFileError(f"unknown layer kind tag {tag}")
        dims = r.unpack(f"<{ndim}I")
        payload = r.take(int(np.prod(dims)))
        crc = zlib.crc32(payload, crc)
        weights = np.frombuffer(payload, dtype=np.int8).reshape(dims)
        entries.append((_TAG_KINDS[tag], weights, scale_exp))
    (stored_crc,) = r.unpack("<I")
    if stored_crc != crc:
        raise WeightFileError("weight file checksum mismatch")
    if r.pos != len(data):
        raise WeightFileError("trailing bytes after checksum")
    return provenance, entries


def load_weights(net, path) -> str:
    """Load a weight file into a built network; returns the provenance string.

    Every stored layer must match the network's weighted layers in order,
    kind, shape and scale exponent source (the scale is taken from the
    file).
    """
    provenance, entries = read_weight_file(path)
    targets = net.weighted_layers()
    if len(entries) != len(targets):
        raise WeightFileError(f"file has {len(entries)} weighted layers, network has {len(targets)}")
    for (kind, weights, scale_exp), layer in zip(entries, targets):
        if kind != layer.kind:
            raise WeightFileError(f"layer kind mismatch: file {kind}, network {layer.kind}")
        if layer.kind == "plastic-output":
            if weights.shape != layer.store.shape:
                raise WeightFileError(f"plastic shape mismatch: {weights.shape} vs {layer.store.shape}")
            layer.store.weights = weights.copy()
            layer.store.scale_exp = int(scale_exp)
        else:
            if weights.shape != layer.weights.shape:
                raise WeightFileError(f"{kind} shape mismatch: {weights.shape} vs {layer.weights.shape}")
            layer.weights = weights.copy()
            layer.scale_exp = int(scale_exp)
            layer.w_eff = layer.weights.astype(np.float64) * 2.0**layer.scale_exp
    net.provenance = provenance
    return provenance
