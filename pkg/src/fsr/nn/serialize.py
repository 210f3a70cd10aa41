"""Versioned binary model format.

Layout: magic "FSRM", u32 version, u32 spec length, spec text (the textual
NetworkSpec format), one flag byte per layer (new-layer marker), then every
parameter tensor in layer order (w before b) as little-endian float32.
Round trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import BadMagicError, SizeMismatchError, VersionMismatchError
from .network import Network, dump_spec, parameter_shapes, parse_spec

MAGIC = b"FSRM"
VERSION = 1


def save_model(net: Network) -> bytes:
    spec_text = dump_spec(net.spec).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(spec_text)), spec_text]
    out.append(bytes(int(f) for f in net.new_layer))
    for p in net.params:
        for key in ("w", "b"):
            if key in p:
                out.append(np.ascontiguousarray(p[key], dtype="<f4").tobytes())
    return b"".join(out)


def load_model(data: bytes) -> Network:
    if data[:4] != MAGIC:
        raise BadMagicError("not a model file")
    if len(data) < 12:
        raise SizeMismatchError("file shorter than header")
    version, spec_len = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise VersionMismatchError(f"version {version}, expected {VERSION}")
    offset = 12
    if len(data) < offset + spec_len:
        raise SizeMismatchError("truncated spec text")
    spec = parse_spec(data[offset : offset + spec_len].decode("utf-8"))
    offset += spec_len
    n_layers = len(spec.layers)
    if len(data) < offset + n_layers:
        raise SizeMismatchError("truncated layer flags")
    flags = [bool(b) for b in data[offset : offset + n_layers]]
    offset += n_layers
    params = []
    for shapes in parameter_shapes(spec):
        p = {}
        for key in ("w", "b"):
            if key in shapes:
                count = int(np.prod(shapes[key]))
                end = offset + 4 * count
                if len(data) < end:
                    raise SizeMismatchError("truncated parameter data")
                p[key] = (
                    np.frombuffer(data[offset:end], dtype="<f4")
                    .reshape(shapes[key])
                    .astype(np.float32)
                )
                offset = end
        params.append(p)
    if offset != len(data):
        raise SizeMismatchError(f"{len(data) - offset} trailing bytes")
    return Network(spec, params, flags)
