"""Binary checkpoint format.

Layout (little-endian)::

    b"SEANCKPT"  u32 version
    u32 config_length, config as UTF-8 JSON (sorted keys)
    u32 entry_count
    per entry: u32 name_length, UTF-8 name, u32 ndim, u64 * ndim shape,
               float64 * prod(shape) data

Every Parameter contributes its value plus ``#adam_m``, ``#adam_v`` and (if
spectrally normalized) ``#spectral_u`` entries; buffers and optimizer step
counters are stored as plain entries.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .layers import Module

MAGIC = b"SEANCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def module_state(module: Module, prefix: str) -> dict[str, np.ndarray]:
    state: dict[str, np.ndarray] = {}
    for name, p in module.named_parameters():
        key = f"{prefix}.{name}"
        state[key] = p.data
        state[key + "#adam_m"] = p.adam_m
        state[key + "#adam_v"] = p.adam_v
        if p.spectral_state is not None:
            state[key + "#spectral_u"] = p.spectral_state
    for name, buf in module.named_buffers():
        state[f"{prefix}.{name}"] = buf
    return state


def load_module_state(module: Module, prefix: str, state: dict[str, np.ndarray]) -> None:
    for name, p in module.named_parameters():
        key = f"{prefix}.{name}"
        if key not in state:
            raise CheckpointError(f"checkpoint has no entry {key!r}")
        if state[key].shape != p.shape:
            raise CheckpointError(f"{key}: checkpoint shape {state[key].shape} != model shape {p.shape}")
        p.value.data = state[key].copy()
        p.adam_m = state[key + "#adam_m"].copy()
        p.adam_v = state[key + "#adam_v"].copy()
        if p.spectral_state is not None:
            p.spectral_state = state[key + "#spectral_u"].copy()
    for mod_name, mod in _named_modules(module):
        for buf in getattr(mod, "_buffer_names", ()):
            key = f"{prefix}.{mod_name}{buf}"
            if key not in state:
                raise CheckpointError(f"checkpoint has no entry {key!r}")
            setattr(mod, buf, state[key].copy())


def _named_modules(module: Module, prefix: str = ""):
    yield prefix, module
    for name, child in module.named_children():
        yield from _named_modules(child, f"{prefix}{name}.")


def encode(config: dict, entries: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(entries)))
    for name, arr in entries.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def decode(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a SEAN checkpoint (bad magic bytes)")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise CheckpointError("truncated checkpoint")
        out = struct.unpack_from(fmt, view, pos)
        pos += size
        return out

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (clen,) = take("<I")
    config = json.loads(bytes(view[pos:pos + clen]).decode("utf-8"))
    pos += clen
    (count,) = take("<I")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = bytes(view[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape)) if ndim else 1
        if pos + 8 * n > len(view):
            raise CheckpointError(f"truncated data for entry {name!r}")
        entries[name] = np.frombuffer(view[pos:pos + 8 * n], dtype="<f8").astype(np.float64).reshape(shape)
        pos += 8 * n
    return config, entries


def save(path, config: dict, entries: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(config, entries))
    return path


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())
