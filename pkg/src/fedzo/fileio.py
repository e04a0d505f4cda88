"""Binary mask/checkpoint formats and the metrics CSV.

Mask file: 8-byte little-endian n, ceil(n/8) packed mask bytes (LSB-first),
then the 32-byte architecture descriptor hash.

Checkpoint: descriptor hash, then n float64 little-endian parameters, then the
packed mask bytes (same layout as the mask file body, without its own hash).

All writes go through write-temp-then-rename.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import DatasetError, ShapeError
from .federation import CSV_HEADER, RoundMetrics
from .layers import ModelDef, descriptor_hash
from .params import Mask, ModelParams, build_segments


def _atomic_write(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".fedzo-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8), bitorder="little").tobytes()


def _unpack_bits(raw: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8),
                         count=n, bitorder="little").astype(np.float64)


def save_mask(path: str, mask: Mask, model: ModelDef) -> None:
    body = struct.pack("<Q", mask.n) + _pack_bits(mask.bits)
    body += descriptor_hash(list(model.spec), model.input_shape)
    _atomic_write(path, body)


def load_mask(path: str, model: ModelDef) -> Mask:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise DatasetError(f"mask file too short: {path}")
    (n,) = struct.unpack("<Q", raw[:8])
    nbytes = (n + 7) // 8
    if len(raw) != 8 + nbytes + 32:
        raise DatasetError(f"mask file {path} has {len(raw)} bytes, "
                           f"expected {8 + nbytes + 32}")
    if raw[8 + nbytes:] != descriptor_hash(list(model.spec), model.input_shape):
        raise ShapeError(f"mask file {path} was built for a different architecture")
    segs, expect_n = build_segments(list(model.spec))
    if n != expect_n:
        raise ShapeError(f"mask length {n} != model parameter count {expect_n}")
    return Mask(segs, _unpack_bits(raw[8:8 + nbytes], n))


def save_checkpoint(path: str, params: ModelParams, mask: Mask,
                    model: ModelDef) -> None:
    body = descriptor_hash(list(model.spec), model.input_shape)
    body += params.flat.astype("<f8").tobytes()
    body += _pack_bits(mask.bits)
    _atomic_write(path, body)


def load_checkpoint(path: str, model: ModelDef) -> tuple[ModelParams, Mask]:
    segs, n = build_segments(list(model.spec))
    with open(path, "rb") as fh:
        raw = fh.read()
    expect = 32 + 8 * n + (n + 7) // 8
    if len(raw) != expect:
        raise DatasetError(f"checkpoint {path} has {len(raw)} bytes, expected {expect}")
    if raw[:32] != descriptor_hash(list(model.spec), model.input_shape):
        raise ShapeError(f"checkpoint {path} was built for a different architecture")
    flat = np.frombuffer(raw[32:32 + 8 * n], dtype="<f8").astype(np.float64)
    mask = Mask(segs, _unpack_bits(raw[32 + 8 * n:], n))
    return ModelParams(segs, flat), mask


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)  # shortest round-trip repr keeps files byte-stable
    return str(x)


def metrics_to_csv(metrics: list[RoundMetrics]) -> str:
    lines = [CSV_HEADER]
    for m in metrics:
        lines.append(",".join(_fmt(v) for v in (
            m.round, m.phase, m.loss, m.accuracy, m.flops_cum,
            m.up_bits, m.down_bits, m.peak_mem_model_bytes)))
    return "\n".join(lines) + "\n"


def save_metrics(path: str, metrics: list[RoundMetrics]) -> None:
    _atomic_write(path, metrics_to_csv(metrics).encode())


def load_metrics(path: str) -> list[RoundMetrics]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise DatasetError(f"{path} is not a metrics CSV (bad header)")
    out = []
    for line in lines[1:]:
        r, phase, loss, acc, fl, up, down, mem = line.split(",")
        out.append(RoundMetrics(int(r), phase, float(loss), float(acc),
                                float(fl), int(up), int(down), int(mem)))
    return out
