"""Binary encoding of a GradientTuple for transit through the shuffler.

Layout (all little-endian)::

    b"SDPG" | version u16 | layout digest u64
    | extractor length u32 | extractor f64 values
    | classifier length u32 | classifier f64 values
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import WireFormatError
from .model import GradientTuple, Layout

MAGIC = b"SDPG"
VERSION = 1
_HEADER = struct.Struct("<4sHQ")
_LEN = struct.Struct("<I")


def serialize(g: GradientTuple) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, g.layout.digest)]
    for seg in (g.extractor, g.classifier):
        parts.append(_LEN.pack(seg.size))
        parts.append(seg.astype("<f8").tobytes())
    return b"".join(parts)


def _read_segment(buf: bytes, offset: int):
    if offset + _LEN.size > len(buf):
        raise WireFormatError("truncated segment length")
    (count,) = _LEN.unpack_from(buf, offset)
    offset += _LEN.size
    end = offset + 8 * count
    if end > len(buf):
        raise WireFormatError("truncated segment values")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64), end


def deserialize(buf: bytes, layout: Layout) -> GradientTuple:
    if len(buf) < _HEADER.size:
        raise WireFormatError("payload shorter than header")
    magic, version, digest = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise WireFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise WireFormatError(f"unsupported version {version}")
    if digest != layout.digest:
        raise WireFormatError("layout digest does not match the receiver's model")
    extractor, offset = _read_segment(buf, _HEADER.size)
    classifier, offset = _read_segment(buf, offset)
    if offset != len(buf):
        raise WireFormatError(f"{len(buf) - offset} trailing bytes")
    if extractor.size != layout.extractor_size or classifier.size != layout.classifier_size:
        raise WireFormatError("segment lengths do not match layout")
    return GradientTuple(extractor, classifier, layout)
