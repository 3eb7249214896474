"""Binary checkpoint of adapter state.

Layout (little-endian throughout)::

    b"DORA"  u32 version
    u32 n    n bytes of UTF-8 JSON header: {"config": {...flat keys...}, "step": int,
                                            "manifest_id": str}
    u32 number of site records, then per site:
        u32 layer, u32 kind code, u32 d_in, u32 d_out,
        32 bytes SHA-256 of w0 (row-major float64),
        u32 r, then per component:
            d_in f64 a, d_out f64 b, f64 c, f64 smoothed score,
            u8 flags (1 = active, 2 = eligible, 4 = score initialised)
    u32 rows, u32 cols of the task head (0, 0 if none), rows*cols f64 weights, cols f64 bias
    u32 CRC-32 of every preceding byte

Base weights are not stored: they are rebuilt from the config seed and
checked against the per-site digests. Plain LoRA sites are written as
components with c = 1.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import RunConfig, from_flat, to_flat
from .errors import CheckpointError, ConfigError
from .layers import KIND_ORDER, DoraLinear, LayerId, LoraLinear
from .model import Encoder

MAGIC = b"DORA"
VERSION = 1


def w0_digest(w0: np.ndarray) -> bytes:
    return hashlib.sha256(np.ascontiguousarray(w0, dtype="<f8").tobytes()).digest()


def _f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def encode(model: Encoder, cfg: RunConfig, step: int = 0, manifest_id: str = "") -> bytes:
    header = json.dumps({"config": to_flat(cfg), "step": step, "manifest_id": manifest_id},
                        sort_keys=True).encode()
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(header)) + header
    sites = model.sites
    out += struct.pack("<I", len(sites))
    for site in sites:
        lid = site.layer_id
        d_in, d_out = site.w0.shape
        out += struct.pack("<IIII", lid.layer, lid.kind.code, d_in, d_out)
        out += w0_digest(site.w0.value)
        out += struct.pack("<I", site.rank)
        for i in range(site.rank):
            out += _f64(site.A.value[:, i]) + _f64(site.B.value[i])
            if isinstance(site, DoraLinear):
                flags = int(site.active[i]) | int(site.eligible[i]) << 1 | int(site.scored[i]) << 2
                out += _f64([site.c.value[0, i], site.smoothed[i]]) + struct.pack("<B", flags)
            else:
                out += _f64([1.0, 0.0]) + struct.pack("<B", 3)
    if model.head_w is None:
        out += struct.pack("<II", 0, 0)
    else:
        rows, cols = model.head_w.shape
        out += struct.pack("<II", rows, cols) + _f64(model.head_w.value) + _f64(model.head_b.value)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def save_checkpoint(path, model: Encoder, cfg: RunConfig, step: int = 0, manifest_id: str = "") -> None:
    Path(path).write_bytes(encode(model, cfg, step, manifest_id))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def decode(data: bytes) -> tuple[RunConfig, Encoder, dict]:
    """Rebuild ``(config, model, header)`` from checkpoint bytes."""
    from .train import build_base, build_model

    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch")
    r = _Reader(body)
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(r.u32()).decode())
        cfg = from_flat(header["config"])
    except (ValueError, KeyError, ConfigError) as exc:
        raise CheckpointError(f"bad header: {exc}") from None

    base = build_base(cfg)
    model = build_model(cfg, base)
    n_sites = r.u32()
    if n_sites != len(model.sites):
        raise CheckpointError(f"expected {len(model.sites)} sites, found {n_sites}")
    for _ in range(n_sites):
        layer, code, d_in, d_out = struct.unpack("<IIII", r.take(16))
        if code >= len(KIND_ORDER) or layer >= cfg.model.layers:
            raise CheckpointError(f"bad site id {layer}:{code}")
        site = model.site(LayerId(layer, KIND_ORDER[code]))
        if site.w0.shape != (d_in, d_out):
            raise CheckpointError(f"site {site.layer_id}: shape {(d_in, d_out)} != {site.w0.shape}")
        if r.take(32) != w0_digest(site.w0.value):
            raise CheckpointError(f"site {site.layer_id}: base weight digest mismatch")
        rank = r.u32()
        if rank != site.rank:
            raise CheckpointError(f"site {site.layer_id}: rank {rank} != configured {site.rank}")
        for i in range(rank):
            site.A.value[:, i] = r.f64(d_in)
            site.B.value[i] = r.f64(d_out)
            c, smoothed = r.f64(2)
            (flags,) = struct.unpack("<B", r.take(1))
            if isinstance(site, DoraLinear):
                site.c.value[0, i] = c
                site.smoothed[i] = smoothed
                site.active[i] = bool(flags & 1)
                site.eligible[i] = bool(flags & 2)
                site.scored[i] = bool(flags & 4)
    rows, cols = r.u32(), r.u32()
    if rows:
        if model.head_w is None or model.head_w.shape != (rows, cols):
            raise CheckpointError("task head shape mismatch")
        model.head_w.value[:] = r.f64(rows * cols).reshape(rows, cols)
        model.head_b.value[:] = r.f64(cols).reshape(1, cols)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    return cfg, model, header


def load_checkpoint(path) -> tuple[RunConfig, Encoder, dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    return decode(data)
