"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic b"RDIFFCKP"
    u32       format version (1)
    u32       header length in bytes, then UTF-8 ``key=value`` lines
    u32       parameter count
    per parameter:
        u16 name length, UTF-8 name
        u8 ndim, ndim x u32 dims
        float32 little-endian data, C order
"""
from __future__ import annotations

import hashlib
import io
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .backbone import BlockConfig, Denoiser

MAGIC = b"RDIFFCKP"
VERSION = 1


def _encode_header(items: list[tuple[str, str]]) -> bytes:
    lines = []
    for k, v in items:
        if "=" in k or "\n" in k or "\n" in v:
            raise ValueError(f"header entry {k!r} cannot be encoded")
        lines.append(f"{k}={v}\n")
    return "".join(lines).encode("utf-8")


def _decode_header(raw: bytes) -> dict[str, str]:
    out = {}
    for line in raw.decode("utf-8").splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"malformed checkpoint header line {line!r}")
        out[key] = value
    return out


def checkpoint_bytes(net: Denoiser, extra: dict[str, str] | None = None) -> bytes:
    items = net.cfg.to_items() + [("variant", net.cfg.variant)]
    items += sorted((k, str(v)) for k, v in (extra or {}).items())
    header = _encode_header(items)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(header)))
    buf.write(header)
    state = net.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        raw_name = name.encode("utf-8")
        arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def save_checkpoint(path, net: Denoiser, extra: dict[str, str] | None = None) -> str:
    """Write atomically; returns the sha256 of the written bytes."""
    data = checkpoint_bytes(net, extra)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return hashlib.sha256(data).hexdigest()


def parse_checkpoint(data: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise ValueError("not a robodiff checkpoint (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise ValueError("truncated checkpoint")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    version, hlen = take("<II")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = _decode_header(bytes(view[pos:pos + hlen]))
    pos += hlen
    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = bytes(view[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        if pos + 4 * n > len(view):
            raise ValueError("truncated checkpoint")
        params[name] = np.frombuffer(view, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
        pos += 4 * n
    if pos != len(view):
        raise ValueError("trailing bytes after checkpoint payload")
    return header, params


def load_checkpoint(path) -> tuple[Denoiser, dict[str, str]]:
    header, params = parse_checkpoint(Path(path).read_bytes())
    cfg = BlockConfig.from_items(header)
    net = Denoiser(cfg)
    expected = net.state_dict()
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        unexpected = sorted(set(params) - set(expected))
        raise ValueError(f"checkpoint parameters do not match config: missing={missing} unexpected={unexpected}")
    net.load_state_dict({k: torch.from_numpy(v) for k, v in params.items()})
    net.eval()
    return net, header


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
