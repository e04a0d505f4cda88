"""Flat parameter vectors, per-layer segmentation, and binary masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .layers import LayerSpec, ModelDef
from .rng import SeededRng


@dataclass(frozen=True)
class Segment:
    layer: int
    role: str          # "weight" | "bias"
    shape: tuple
    offset: int
    size: int

    @property
    def prunable(self) -> bool:
        return self.role == "weight"


def build_segments(spec: list[LayerSpec]) -> tuple[list[Segment], int]:
    """Segment table partitioning the flat vector [0, n)."""
    segs = []
    off = 0
    for i, layer in enumerate(spec):
        if layer.kind == "dense":
            fin, fout = layer.dims
            segs.append(Segment(i, "weight", (fout, fin), off, fout * fin))
            off += fout * fin
            if layer.bias:
                segs.append(Segment(i, "bias", (fout,), off, fout))
                off += fout
        elif layer.kind == "conv2d":
            cin, cout, k, _ = layer.dims
            size = cout * cin * k * k
            segs.append(Segment(i, "weight", (cout, cin, k, k), off, size))
            off += size
            if layer.bias:
                segs.append(Segment(i, "bias", (cout,), off, cout))
                off += cout
    return segs, off


class ModelParams:
    """Flat float64 parameter vector with a per-layer segment view.

    Treated as immutable: operations that change parameters build a new
    instance via `with_flat`, so traces can detect staleness by identity.
    """

    def __init__(self, segments: list[Segment], flat: np.ndarray):
        n = segments[-1].offset + segments[-1].size if segments else 0
        if flat.shape != (n,):
            raise ShapeError(f"flat vector has shape {flat.shape}, expected ({n},)")
        self.segments = segments
        self.flat = np.asarray(flat, dtype=np.float64)
        self.flat.flags.writeable = False

    @property
    def n(self) -> int:
        return self.flat.size

    def with_flat(self, flat: np.ndarray) -> "ModelParams":
        return ModelParams(self.segments, np.array(flat, dtype=np.float64))

    def segment_view(self, flat: np.ndarray, seg: Segment) -> np.ndarray:
        return flat[seg.offset:seg.offset + seg.size].reshape(seg.shape)


def init_params(model: ModelDef, rng: SeededRng) -> ModelParams:
    """He-style init: weights N(0, 2/fan_in), biases zero. Deterministic."""
    segs, n = build_segments(list(model.spec))
    flat = np.zeros(n)
    for si, seg in enumerate(segs):
        if seg.role != "weight":
            continue
        fan_in = int(np.prod(seg.shape[1:]))
        std = np.sqrt(2.0 / fan_in)
        flat[seg.offset:seg.offset + seg.size] = rng.stream("init", si).gaussian(
            seg.size, std)
    return ModelParams(segs, flat)


def prunable_index(segments: list[Segment], n: int) -> np.ndarray:
    """Boolean flat index of prunable (weight) coordinates."""
    idx = np.zeros(n, dtype=bool)
    for seg in segments:
        if seg.prunable:
            idx[seg.offset:seg.offset + seg.size] = True
    return idx


class Mask:
    """Binary mask aligned to ModelParams.flat; unprunable roles are always 1."""

    def __init__(self, segments: list[Segment], bits: np.ndarray):
        bits = np.asarray(bits, dtype=np.float64)
        n = segments[-1].offset + segments[-1].size if segments else 0
        if bits.shape != (n,):
            raise ShapeError(f"mask has shape {bits.shape}, expected ({n},)")
        if not np.all((bits == 0) | (bits == 1)):
            raise ShapeError("mask bits must be 0 or 1")
        for seg in segments:
            if not seg.prunable and not np.all(bits[seg.offset:seg.offset + seg.size] == 1):
                raise ShapeError(f"unprunable segment (layer {seg.layer} {seg.role}) "
                                 "must stay fully active")
        self.segments = segments
        self.bits = bits
        self.bits.flags.writeable = False

    @classmethod
    def ones(cls, segments: list[Segment]) -> "Mask":
        n = segments[-1].offset + segments[-1].size if segments else 0
        return cls(segments, np.ones(n))

    @property
    def n(self) -> int:
        return self.bits.size

    @property
    def density(self) -> float:
        return float(self.bits.sum() / self.bits.size)

    def prunable_density(self) -> float:
        idx = prunable_index(self.segments, self.n)
        return float(self.bits[idx].sum() / idx.sum())

    def layer_weight_density(self) -> dict[int, float]:
        """Surviving fraction of each layer's weight segment."""
        out = {}
        for seg in self.segments:
            if seg.prunable:
                b = self.bits[seg.offset:seg.offset + seg.size]
                out[seg.layer] = float(b.sum() / b.size)
        return out

    def with_bits(self, bits: np.ndarray) -> "Mask":
        return Mask(self.segments, np.array(bits))
