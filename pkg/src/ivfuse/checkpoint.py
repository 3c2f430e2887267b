"""Binary checkpoint container for parameters and optimizer state.

Byte layout (all integers little-endian, payloads little-endian float64;
the full normative description lives in docs/file_formats.md):

    magic    8 bytes  b"IVFCKPT\\x00"
    version  u32      currently 1
    meta_len u32      length of the metadata block
    meta     bytes    UTF-8 "key=value" lines joined by "\\n"
    count    u32      number of parameters
    per parameter, in file order:
        name_len u32, name UTF-8 bytes
        step     u64
        ndim     u32, dims u32 * ndim
        data     f64 * prod(dims)  (parameter values)
        m        f64 * prod(dims)  (first moment)
        v        f64 * prod(dims)  (second moment)

Writes are atomic: the file is written to a temp sibling then renamed.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"IVFCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ParamState:
    data: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int


def _encode_meta(meta: dict[str, str]) -> bytes:
    lines = []
    for k, v in meta.items():
        k, v = str(k), str(v)
        if "=" in k or "\n" in k or "\n" in v:
            raise CheckpointError(f"metadata key/value not encodable: {k!r}={v!r}")
        lines.append(f"{k}={v}")
    return "\n".join(lines).encode("utf-8")


def _decode_meta(blob: bytes) -> dict[str, str]:
    meta: dict[str, str] = {}
    if not blob:
        return meta
    for line in blob.decode("utf-8").split("\n"):
        k, _, v = line.partition("=")
        meta[k] = v
    return meta


def save_checkpoint(path, params, meta: dict[str, str] | None = None) -> None:
    """Serialize ``params`` (iterable of Parameter) plus metadata to ``path``."""
    params = list(params)
    blob = _encode_meta(meta or {})
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(blob)), blob,
              struct.pack("<I", len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<Q", p.step))
        dims = p.data.shape
        chunks.append(struct.pack("<I", len(dims)))
        chunks.append(struct.pack(f"<{len(dims)}I", *dims) if dims else b"")
        for arr in (p.data, p.m, p.v):
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint; returns (meta, {name: ParamState})."""
    with open(path, "rb") as f:
        raw = f.read()
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"checkpoint truncated at byte {pos}")
        piece = view[pos:pos + n]
        pos += n
        return piece

    if bytes(take(8)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = _decode_meta(bytes(take(meta_len)))
    (count,) = struct.unpack("<I", take(4))
    states: dict[str, ParamState] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (step,) = struct.unpack("<Q", take(8))
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        size = int(np.prod(dims)) if dims else 1
        arrs = []
        for _ in range(3):
            arr = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
            arrs.append(np.ascontiguousarray(arr))
        states[name] = ParamState(arrs[0], arrs[1], arrs[2], step)
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after checkpoint payload")
    return meta, states


def restore_parameters(params, states: dict[str, ParamState]) -> None:
    """Load saved state into live parameters, matching by name and shape."""
    params = list(params)
    names = {p.name for p in params}
    missing = [p.name for p in params if p.name not in states]
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {missing[:5]}")
    extra = [n for n in states if n not in names]
    if extra:
        raise CheckpointError(f"checkpoint has unknown parameters: {extra[:5]}")
    for p in params:
        st = states[p.name]
        if st.data.shape != p.data.shape:
            raise CheckpointError(
                f"parameter {p.name}: checkpoint shape {st.data.shape} != model {p.data.shape}"
            )
        p.tensor.data = st.data.copy()
        p.m = st.m.copy()
        p.v = st.v.copy()
        p.step = st.step
