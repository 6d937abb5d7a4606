"""Binary checkpoints: parameters, buffers, optimizer moments, config echo.

Layout (little-endian throughout)::

    magic "SSPK" | u16 version | u32 epoch | u64 prng cursor | u64 optimizer steps
    u32 config length | config as UTF-8 JSON
    u32 entry count, then per entry:
        u8 kind (0 parameter, 1 buffer, 2 first moment, 3 second moment)
        u16 name length | name | u8 dtype (0 f32, 1 f64) | u8 ndim | ndim x u32 shape | data
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

MAGIC = b"SSPK"
VERSION = 1
KINDS = ("parameter", "buffer", "moment_m", "moment_v")
DTYPES = (np.dtype("<f4"), np.dtype("<f8"))


@dataclass
class Checkpoint:
    config: dict
    epoch: int = 0
    cursor: int = 0
    steps: int = 0
    parameters: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    moments: dict = field(default_factory=dict)  # name -> (m, v)


def _dtype_code(array):
    dt = np.asarray(array).dtype
    if dt == np.float32:
        return 0
    if dt == np.float64:
        return 1
    raise FormatError(f"unsupported dtype {dt} in checkpoint")


def _entry(kind, name, array):
    array = np.asarray(array)
    code = _dtype_code(array)
    raw = name.encode()
    head = struct.pack("<BH", kind, len(raw)) + raw + struct.pack("<BB", code, array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array, dtype=DTYPES[code]).tobytes()


def save_checkpoint(path, model, optimizer=None, config=None, epoch=0, cursor=0):
    entries = [_entry(0, n, p.data) for n, p in model.named_parameters()]
    entries += [_entry(1, n, b) for n, b in model.named_buffers()]
    steps = 0
    if optimizer is not None:
        steps = optimizer.steps
        for name, (m, v) in optimizer.moments(model.named_parameters()).items():
            entries += [_entry(2, name, m), _entry(3, name, v)]
    blob = json.dumps(config or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHIQQ", MAGIC, VERSION, epoch, cursor, steps))
        fh.write(struct.pack("<I", len(blob)) + blob)
        fh.write(struct.pack("<I", len(entries)))
        for e in entries:
            fh.write(e)


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated {what}", offset=self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    magic = blob[:4]
    if magic != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {magic!r})", offset=0)
    _, version, epoch, cursor, steps = r.unpack("<4sHIQQ", "header")
    if version != VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, expected {VERSION}", offset=4)
    (n,) = r.unpack("<I", "config length")
    try:
        config = json.loads(r.take(n, "config").decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(f"{path}: unreadable config echo", offset=r.pos - n) from None
    ck = Checkpoint(config=config, epoch=epoch, cursor=cursor, steps=steps)
    (count,) = r.unpack("<I", "entry count")
    half = {}
    for _ in range(count):
        start = r.pos
        kind, name_len = r.unpack("<BH", "entry header")
        name = r.take(name_len, "entry name").decode()
        code, ndim = r.unpack("<BB", "entry header")
        if kind >= len(KINDS) or code >= len(DTYPES):
            raise FormatError(f"{path}: bad entry {name!r}", offset=start)
        shape = r.unpack(f"<{ndim}I", "entry shape")
        dt = DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        data = np.frombuffer(r.take(size, f"data of {name!r}"), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        if kind == 0:
            ck.parameters[name] = data
        elif kind == 1:
            ck.buffers[name] = data
        else:
            half.setdefault(name, [None, None])[kind - 2] = data
    if r.pos != len(blob):
        raise FormatError(f"{path}: trailing bytes", offset=r.pos)
    for name, (m, v) in half.items():
        if m is None or v is None:
            raise FormatError(f"{path}: incomplete optimizer moments for {name!r}")
        ck.moments[name] = (m, v)
    return ck


def restore_into(ck, model, optimizer=None):
    """Load parameters and buffers (and optimizer state) into existing objects."""
    model.load_state_dict({**ck.parameters, **ck.buffers})
    if optimizer is not None:
        names = dict(model.named_parameters())
        for name in ck.moments:
            if name not in names:
                raise FormatError(f"optimizer moments for unknown parameter {name!r}")
        optimizer.load_moments(model.named_parameters(), ck.moments, ck.steps)
