"""Bit-exact network checkpoints.

Layout (all integers unsigned 32-bit little-endian)::

    b"DGNET1\\n"                      magic
    version                           = 1
    9 config ints                     NetworkConfig fields, declaration order
    parameter count
    per parameter:
        name length, UTF-8 name
        rank, extents...
        values                        float64 little-endian, row-major
    CRC-32 of every preceding byte

Optimizer momentum buffers, when saved, are stored as extra parameters
named ``opt.<param>``.
"""

import struct
import zlib
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointVersionError,
    ConfigError,
)
from .network import DeepGalaxyNet, NetworkConfig, OptimizerState

MAGIC = b"DGNET1\n"
VERSION = 1
_OPT_PREFIX = "opt."
_CONFIG_FIELDS = [f.name for f in fields(NetworkConfig)]


def _u32(v):
    return struct.pack("<I", v)


def encode_checkpoint(net, opt_state=None):
    out = bytearray(MAGIC)
    out += _u32(VERSION)
    for name in _CONFIG_FIELDS:
        out += _u32(getattr(net.config, name))
    params = list(net.parameters().items())
    if opt_state is not None:
        params += [(_OPT_PREFIX + k, v) for k, v in opt_state.velocity.items()]
    out += _u32(len(params))
    for name, arr in params:
        raw = name.encode("utf-8")
        out += _u32(len(raw)) + raw
        out += _u32(arr.ndim)
        for e in arr.shape:
            out += _u32(e)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    out += _u32(zlib.crc32(out))
    return bytes(out)


def save_checkpoint(net, path, opt_state=None):
    Path(path).write_bytes(encode_checkpoint(net, opt_state))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError("checkpoint is truncated")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def decode_checkpoint(buf):
    """Return ``(net, opt_state_or_None)`` from checkpoint bytes."""
    head = buf[:len(MAGIC)]
    if head != MAGIC:
        if MAGIC.startswith(head):
            raise CheckpointFormatError("checkpoint is truncated")
        raise CheckpointVersionError(f"not a DGNET1 checkpoint (magic {head!r})")
    r = _Reader(buf)
    r.take(len(MAGIC))
    version = r.u32()
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    values = {name: r.u32() for name in _CONFIG_FIELDS}
    try:
        config = NetworkConfig(**values)
    except ConfigError as exc:
        raise CheckpointFormatError(f"invalid network config in checkpoint: {exc}") from None
    count = r.u32()
    params = {}
    for _ in range(count):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError("parameter name is not valid UTF-8") from None
        rank = r.u32()
        if not 1 <= rank <= 4:
            raise CheckpointFormatError(f"parameter {name!r} has invalid rank {rank}")
        shape = tuple(r.u32() for _ in range(rank))
        size = int(np.prod(shape))
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    body_end = r.pos
    stored = r.u32()
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{len(buf) - r.pos} unexpected trailing bytes")
    if zlib.crc32(buf[:body_end]) != stored:
        raise CheckpointChecksumError("checkpoint CRC-32 mismatch")

    velocity = {k[len(_OPT_PREFIX):]: v for k, v in params.items() if k.startswith(_OPT_PREFIX)}
    weights = {k: v for k, v in params.items() if not k.startswith(_OPT_PREFIX)}
    try:
        net = DeepGalaxyNet.from_parameters(config, weights)
    except ConfigError as exc:
        raise CheckpointFormatError(str(exc)) from None
    opt = None
    if velocity:
        opt = OptimizerState(net)
        if set(velocity) != set(opt.velocity):
            raise CheckpointFormatError("optimizer state does not match the parameters")
        for k, v in velocity.items():
            if v.shape != opt.velocity[k].shape:
                raise CheckpointFormatError(f"optimizer buffer {k} has the wrong shape")
            opt.velocity[k][...] = v
    return net, opt


def load_checkpoint(path, with_optimizer=False):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    net, opt = decode_checkpoint(buf)
    return (net, opt) if with_optimizer else net
