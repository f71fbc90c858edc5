"""Binary checkpoint format.

Little-endian: ``AUNN``, u8 version, u32 length + UTF-8 JSON descriptor,
u32 tensor count, then per tensor: u32 length + UTF-8 name, u8 rank,
rank x u32 extents, float32 data in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import BadMagic, InvalidDescriptor, ShapeMismatch, TruncatedData, VersionMismatch
from .network import ArchitectureDescriptor, Network, parameter_shapes

MAGIC = b"AUNN"
VERSION = 1


def save_checkpoint(net: Network) -> bytes:
    desc = net.descriptor.to_json().encode("utf-8")
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(desc)), desc,
             struct.pack("<I", len(net.params))]
    for name, arr in net.params.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise TruncatedData(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(data: bytes, expected: ArchitectureDescriptor | str | None = None) -> Network:
    """Parse a checkpoint. Nothing is returned unless the whole buffer is valid.

    ``expected`` may be a descriptor or a variant name; parameters that do not
    fit it raise :class:`ShapeMismatch`.
    """
    if len(data) < 5 or bytes(data[:4]) != MAGIC:
        raise BadMagic("not an AUNN checkpoint")
    r = _Reader(data)
    r.take(4)
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    (dlen,) = r.unpack("<I")
    try:
        descriptor = ArchitectureDescriptor.from_json(bytes(r.take(dlen)).decode("utf-8"))
    except (ValueError, InvalidDescriptor) as exc:
        raise BadMagic(f"corrupt descriptor: {exc}") from None
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = bytes(r.take(nlen)).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
    if r.pos != len(data):
        raise TruncatedData(f"{len(data) - r.pos} trailing bytes after last tensor")

    shapes = parameter_shapes(descriptor)
    if list(params) != list(shapes) or any(params[k].shape != s for k, s in shapes.items()):
        raise ShapeMismatch("checkpoint tensors do not match its own descriptor")
    if expected is not None:
        want = expected if isinstance(expected, ArchitectureDescriptor) else None
        if want is None and descriptor.variant != expected:
            raise ShapeMismatch(f"checkpoint is a {descriptor.variant} network, expected {expected}")
        if want is not None and parameter_shapes(want) != shapes:
            raise ShapeMismatch(f"checkpoint ({descriptor.variant}) does not fit the expected {want.variant} layout")
    return Network(descriptor, params)
