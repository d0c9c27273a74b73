"""Binary checkpoints: named float64 tensors, optimizer state, baseline, step.

Layout (little-endian): magic "FSI2P-CKPT1", u32 format version, u32 tensor
count, then per tensor u16 name length, name bytes (utf-8), u8 rank, u32 per
dimension, f64 data; then f64 reward baseline, u64 step counter, u32 config
snapshot length, snapshot bytes (utf-8). Optimizer momentum buffers ride
along as ordinary tensors named "opt.m.<parameter name>".
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"FSI2P-CKPT1"
VERSION = 1
OPT_PREFIX = "opt.m."


@dataclass
class CheckpointData:
    tensors: dict       # name -> float64 ndarray (model and optimizer entries)
    baseline: float
    step: int
    config_text: str
    version: int = VERSION

    def model_tensors(self) -> dict:
        return {k: v for k, v in self.tensors.items() if not k.startswith(OPT_PREFIX)}

    def optimizer_tensors(self) -> dict:
        return {k[len(OPT_PREFIX):]: v for k, v in self.tensors.items()
                if k.startswith(OPT_PREFIX)}


def save_checkpoint(path: Path, tensors: dict, baseline: float, step: int,
                    config_text: str = "") -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"checkpoint: tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ValueError(f"checkpoint: rank {arr.ndim} unsupported for {name!r}")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    parts.append(struct.pack("<d", float(baseline)))
    parts.append(struct.pack("<Q", int(step)))
    snap = config_text.encode("utf-8")
    parts.append(struct.pack("<I", len(snap)))
    parts.append(snap)
    path = Path(path)
    try:
        path.write_bytes(b"".join(parts))
    except OSError as e:
        raise OSError(f"failed writing checkpoint to {path}: {e}") from e


def load_checkpoint(path: Path) -> CheckpointData:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise OSError(f"failed reading checkpoint from {path}: {e}") from e
    if buf[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    off = len(MAGIC)
    version, count = struct.unpack_from("<II", buf, off)
    off += 8
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        tensors[name] = arr.astype(np.float64)
    (baseline,) = struct.unpack_from("<d", buf, off)
    off += 8
    (step,) = struct.unpack_from("<Q", buf, off)
    off += 8
    (snap_len,) = struct.unpack_from("<I", buf, off)
    off += 4
    config_text = buf[off:off + snap_len].decode("utf-8")
    off += snap_len
    if off != len(buf):
        raise ValueError(f"{path}: {len(buf) - off} trailing bytes")
    return CheckpointData(tensors=tensors, baseline=float(baseline),
                          step=int(step), config_text=config_text,
                          version=version)


def restore_into(named_tensors: dict, stored: dict) -> None:
    """Copy stored arrays into live Tensors; mismatches name the tensor."""
    for name, tens in named_tensors.items():
        if name not in stored:
            raise ValueError(f"checkpoint: missing tensor {name!r}")
        arr = stored[name]
        if tuple(arr.shape) != tuple(tens.data.shape):
            raise ValueError(
                f"checkpoint: shape mismatch for {name!r}: "
                f"stored {tuple(arr.shape)}, model {tuple(tens.data.shape)}")
        tens.data[...] = arr
    extra = set(stored) - set(named_tensors)
    if extra:
        raise ValueError(f"checkpoint: unexpected tensors {sorted(extra)[:5]}")
