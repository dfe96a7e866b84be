"""Binary weight file: a JSON-described, CRC-checked float32 tensor blob.

Layout, all little-endian:

    magic  'SLUW' (4 bytes)
    u32    format version (currently 1)
    u32    JSON header length in bytes
    bytes  JSON header: ordered layer list (kind, kernel dims, channels,
           batchnorm flag, activation), ordered tensor table (name, shape),
           and optionally the intent label names
    bytes  every tensor's float32 data, concatenated in table order
    u32    CRC-32 of the payload bytes

Loading rebuilds the architecture from the layer list, so a weight file is
self-describing; the tensor table must agree with the architecture's shapes
or loading fails.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict

import numpy as np

from .model import LayerSpec, ModelWeights, init_weights

MAGIC = b"SLUW"
VERSION = 1


class WeightFileError(ValueError):
    """Base class for unreadable weight files."""


class WeightFormatError(WeightFileError):
    """Malformed container: bad magic, truncation, undecodable header."""


class UnknownVersionError(WeightFileError):
    """The file declares a format version this reader does not speak."""


class ShapeMismatchError(WeightFileError):
    """Tensor table disagrees with the declared architecture."""


class ChecksumError(WeightFileError):
    """Payload bytes do not match the stored CRC-32."""


def save_weights(weights: ModelWeights, path) -> None:
    tensors = list(weights.named_tensors())
    header = {
        "layers": [asdict(spec) for spec in weights.specs],
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    if weights.labels is not None:
        header["labels"] = list(weights.labels)
    header_bytes = json.dumps(header).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes()
                       for _, arr in tensors)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", MAGIC, VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise WeightFormatError(f"{path}: too small to hold a weight file header")
    magic, version, header_len = struct.unpack_from("<4sII", blob, 0)
    if magic != MAGIC:
        raise WeightFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnknownVersionError(
            f"{path}: format version {version}, this reader supports {VERSION}")
    if len(blob) < 12 + header_len + 4:
        raise WeightFormatError(f"{path}: truncated before the end of the header")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
        specs = tuple(LayerSpec(**d) for d in header["layers"])
        table = [(entry["name"], tuple(entry["shape"])) for entry in header["tensors"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise WeightFormatError(f"{path}: undecodable header ({exc})") from exc

    payload_len = sum(int(np.prod(shape)) * 4 for _, shape in table)
    expected_size = 12 + header_len + payload_len + 4
    if len(blob) != expected_size:
        raise WeightFormatError(
            f"{path}: file is {len(blob)} bytes, header implies {expected_size}")
    payload = blob[12 + header_len:12 + header_len + payload_len]
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) != stored_crc:
        raise ChecksumError(f"{path}: payload CRC mismatch, file is corrupt")

    # Shape-check the table against the architecture, then fill the tensors.
    weights = init_weights(specs, seed=0, dtype=np.float32)
    expected = {name: arr.shape for name, arr in weights.named_tensors()}
    declared = dict(table)
    if set(declared) != set(expected):
        extra = sorted(set(declared) - set(expected))
        missing = sorted(set(expected) - set(declared))
        raise ShapeMismatchError(
            f"{path}: tensor table mismatch (unexpected {extra}, missing {missing})")
    offset = 0
    for name, shape in table:
        if expected[name] != shape:
            raise ShapeMismatchError(
                f"{path}: tensor {name} declared {shape}, architecture needs "
                f"{expected[name]}")
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=count,
                            offset=offset).reshape(shape)
        weights.set_tensor(name, arr.copy())
        offset += count * 4
    weights.labels = list(header["labels"]) if "labels" in header else None
    return weights
