"""
Checkpoint file functions for the RedApt pipeline.

File layout (all integers little-endian):

    b"RAPT" | u32 version | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 dtype (0=f32, 1=f64) | u8 rank
               | rank x u64 dims | payload

Parameters are stored as ``param/<name>``, Adam moments as
``adam_m/<name>`` and ``adam_v/<name>``, and the step counter as the
rank-0 entry ``step``.
"""

import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from redapt.utils.errors import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)

logger = logging.getLogger(__name__)

MAGIC = b'RAPT'
VERSION = 1
DTYPES = {0: np.dtype('<f4'), 1: np.dtype('<f8')}
DTYPE_CODES = {'f32': 0, 'f64': 1}


@dataclass
class Checkpoint:
    """Named parameter arrays, Adam moments and the optimizer step."""

    params: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def entries(self):
        out = {}
        for prefix, group in (('param', self.params), ('adam_m', self.adam_m), ('adam_v', self.adam_v)):
            for name, value in group.items():
                out[f"{prefix}/{name}"] = np.asarray(value, dtype=np.float64)
        out['step'] = np.asarray(float(self.step))
        return out

    @classmethod
    def from_entries(cls, entries):
        ckpt = cls()
        for key, value in entries.items():
            if key == 'step':
                ckpt.step = int(value)
                continue
            prefix, _, name = key.partition('/')
            group = {'param': ckpt.params, 'adam_m': ckpt.adam_m, 'adam_v': ckpt.adam_v}.get(prefix)
            if group is None or not name:
                raise CheckpointError(f"unexpected checkpoint entry '{key}'")
            group[name] = value
        return ckpt

    def equals(self, other):
        """Bitwise equality of every entry."""
        mine, theirs = self.entries(), other.entries()
        if mine.keys() != theirs.keys():
            return False
        return all(
            mine[k].shape == theirs[k].shape and mine[k].tobytes() == theirs[k].tobytes() for k in mine
        )


def from_training_state(named_params, adam_state):
    """Snapshot live Tensors and an AdamState into a Checkpoint (arrays are copied)."""
    return Checkpoint(
        params={name: p.data.copy() for name, p in named_params.items()},
        adam_m={name: m.copy() for name, m in adam_state.m.items()},
        adam_v={name: v.copy() for name, v in adam_state.v.items()},
        step=adam_state.step,
    )


def save_checkpoint(ckpt, path, dtype='f64'):
    """
    Write ``ckpt`` to ``path``.

    Args:
        ckpt: Checkpoint
        path: output file
        dtype: 'f64' (bit-exact round trip) or 'f32'
    """
    if dtype not in DTYPE_CODES:
        raise CheckpointError(f"unsupported checkpoint dtype '{dtype}' (use f32 or f64)")
    code = DTYPE_CODES[dtype]
    entries = ckpt.entries()
    chunks = [MAGIC, struct.pack('<II', VERSION, len(entries))]
    for name, value in entries.items():
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<BB', code, value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype=DTYPES[code]).tobytes())
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(b''.join(chunks))
    logger.info(f"Saved checkpoint with {len(entries)} entries (step {ckpt.step}) to {path}")


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, n):
        if self.offset + n > len(self.blob):
            raise CheckpointTruncatedError(
                f"checkpoint {self.path} truncated at byte {len(self.blob)} (needed {self.offset + n})"
            )
        chunk = self.blob[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointMagicError: file does not start with b"RAPT"
        CheckpointVersionError: unsupported format version
        CheckpointTruncatedError: file ends before all entries are read, or
            holds only part of the magic
    """
    with open(path, 'rb') as f:
        blob = f.read()
    reader = _Reader(blob, path)
    # A prefix of the magic is a cut-off checkpoint, not a foreign file
    if len(blob) < len(MAGIC) and MAGIC.startswith(blob):
        raise CheckpointTruncatedError(f"checkpoint {path} truncated at byte {len(blob)} (needed {len(MAGIC)})")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointMagicError(f"{path} is not a checkpoint (bad magic {blob[:4]!r})")
    reader.take(len(MAGIC))
    version, count = reader.unpack('<II')
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint {path} has version {version}, expected {VERSION}")

    entries = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8')
        code, rank = reader.unpack('<BB')
        if code not in DTYPES:
            raise CheckpointError(f"entry '{name}' has unknown dtype code {code}")
        dims = reader.unpack(f"<{rank}Q")
        dtype = DTYPES[code]
        payload = reader.take(int(np.prod(dims, dtype=np.int64)) * dtype.itemsize)
        entries[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(np.float64)
    if reader.offset != len(blob):
        raise CheckpointError(f"checkpoint {path} has {len(blob) - reader.offset} trailing bytes")
    logger.info(f"Loaded checkpoint with {count} entries from {path}")
    return Checkpoint.from_entries(entries)


def restore_params(named_params, ckpt):
    """Copy checkpoint arrays into live Tensors; names and shapes must match."""
    for name, p in named_params.items():
        if name not in ckpt.params:
            raise CheckpointError(f"checkpoint has no parameter '{name}'")
        value = ckpt.params[name]
        if value.shape != p.shape:
            raise CheckpointError(f"parameter '{name}' has shape {value.shape} in checkpoint, {p.shape} in model")
        p.data = value.copy()
