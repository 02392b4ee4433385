"""Binary weight file.

Layout (all integers little-endian)::

    b"MIRN" 0x01
    repeated, in canonical array order:
        u8 name length, ASCII name, u8 rank, rank x u32 extents,
        prod(extents) x f64 row-major data

No padding and no checksum.
"""
import struct

import numpy as np

from .model import DEFAULT_ARCH, ModelParams, expected_shapes

MAGIC = b"MIRN"
VERSION = 1


class WeightFileError(ValueError):
    pass


class BadMagicError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ShapeMismatchError(WeightFileError):
    def __init__(self, name, found, expected):
        super().__init__(f"array {name!r} has shape {found}, expected {expected}")
        self.name = name


def dump_weights(params: ModelParams) -> bytes:
    chunks = [MAGIC, bytes([VERSION])]
    for name, arr in params.named_arrays().items():
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode("ascii")
        chunks.append(struct.pack("<B", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def save_weights(params: ModelParams, path):
    with open(path, "wb") as fh:
        fh.write(dump_weights(params))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file truncated while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def at_end(self):
        return self.pos == len(self.data)


def parse_weights(data: bytes, arch=DEFAULT_ARCH) -> ModelParams:
    reader = _Reader(data)
    if len(data) < 5:
        raise TruncatedFileError("file too short for a header")
    if reader.take(4, "magic") != MAGIC:
        raise BadMagicError("not a weight file (bad magic)")
    version = reader.take(1, "version")[0]
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    shapes = expected_shapes(arch)
    arrays = {}
    for expected_name, shape in shapes.items():
        (n,) = struct.unpack("<B", reader.take(1, "name length"))
        name = reader.take(n, "array name").decode("ascii")
        if name != expected_name:
            raise WeightFileError(f"expected array {expected_name!r}, found {name!r}")
        (rank,) = struct.unpack("<B", reader.take(1, f"rank of {name}"))
        found = struct.unpack(f"<{rank}I", reader.take(4 * rank, f"extents of {name}"))
        if tuple(found) != tuple(shape):
            raise ShapeMismatchError(name, tuple(found), tuple(shape))
        size = int(np.prod(found))
        raw = reader.take(8 * size, f"data of {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(found)
    if not reader.at_end():
        raise WeightFileError(f"{len(data) - reader.pos} trailing bytes after the last array")
    return ModelParams.from_named_arrays(arrays, arch)


def load_weights(path, arch=DEFAULT_ARCH) -> ModelParams:
    with open(path, "rb") as fh:
        return parse_weights(fh.read(), arch)
