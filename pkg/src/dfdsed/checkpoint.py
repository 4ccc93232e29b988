"""Binary model checkpoints.

Layout (all integers little-endian u32)::

    b"DFDC" | version | len(config) | config text (utf-8)
    | n_tensors | { len(name) | name | rank | dims... | float32 data }*

The config text is the ``model.*`` block of the run-config format plus a
``provenance.seed`` line. Parameters and batch-norm running statistics are
stored as float32, so a round trip reproduces values to float32 rounding.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import ConfigError, model_config_from_text, model_config_to_text
from .model import CRNN, ModelConfig, build_crnn

MAGIC = b"DFDC"
VERSION = 1


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint file."""


class ConfigMismatchError(CheckpointError):
    pass


def _tensors(model: CRNN) -> dict[str, np.ndarray]:
    out = {name: t.data for name, t in model.named_parameters().items()}
    out.update(model.buffers())
    return out


def checkpoint_bytes(model: CRNN) -> bytes:
    text = model_config_to_text(model.config) + f"provenance.seed = {model.seed}\n"
    cfg = text.encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg]
    tensors = _tensors(model)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: CRNN, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"corrupt checkpoint: truncated at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, expect: ModelConfig | None = None) -> CRNN:
    """Rebuild a model from ``path``; with ``expect``, the stored config must equal it."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError("corrupt checkpoint: bad magic")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        text = r.take(r.u32()).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError("corrupt checkpoint: config block is not utf-8") from exc
    model_lines, seed = [], 0
    for line in text.splitlines():
        if line.startswith("provenance.seed"):
            seed = int(line.split("=", 1)[1])
        elif line.strip():
            model_lines.append(line)
    try:
        config = model_config_from_text("\n".join(model_lines))
    except ConfigError as exc:
        raise CheckpointError(f"corrupt checkpoint config: {exc}") from exc
    if expect is not None and expect != config:
        diff = [k for k in vars(expect) if getattr(expect, k) != getattr(config, k)]
        raise ConfigMismatchError(f"checkpoint config differs from expected in: {', '.join(diff)}")

    model = build_crnn(config, seed)
    params = model.named_parameters()
    buffers = model.buffers()
    seen = set()
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float64).reshape(shape)
        if name in params:
            if params[name].shape != shape:
                raise CheckpointError(f"shape mismatch for {name}: file {shape}, model {params[name].shape}")
            params[name].data = data
        elif name in buffers:
            if buffers[name].shape != shape:
                raise CheckpointError(f"shape mismatch for {name}: file {shape}, model {buffers[name].shape}")
            model.set_buffer(name, data)
        else:
            raise CheckpointError(f"unknown tensor {name!r} in checkpoint")
        seen.add(name)
    missing = (set(params) | set(buffers)) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {', '.join(sorted(missing))}")
    if r.pos != len(r.buf):
        raise CheckpointError("corrupt checkpoint: trailing bytes")
    return model
