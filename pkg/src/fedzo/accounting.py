"""Analytic FLOPs, communication-bit, and peak-memory models.

All quantities are byte/bit arithmetic over the layer spec, never platform
measurements. Transmission is modeled at 32 bits per float and 64 bits per
seed; in-memory activations and parameters at 4 bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import LayerSpec, infer_shapes
from .params import build_segments

_FLOAT_BITS = 32
_SEED_BITS = 64
_FLOAT_BYTES = 4


@dataclass
class CostLedger:
    up_bits: int = 0
    down_bits: int = 0
    flops: float = 0.0
    peak_mem_bytes: int = 0

    def add_comm(self, up_bits: int = 0, down_bits: int = 0) -> None:
        assert up_bits >= 0 and down_bits >= 0
        self.up_bits += int(up_bits)
        self.down_bits += int(down_bits)

    def add_flops(self, flops: float) -> None:
        assert flops >= 0
        self.flops += flops

    def observe_mem(self, bytes_: int) -> None:
        self.peak_mem_bytes = max(self.peak_mem_bytes, int(bytes_))


def comm_training_round(n: int, d: float, k: int, mode: str,
                        devices: int = 1) -> tuple[int, int]:
    """(up_bits, down_bits) for one training round.

    seed-trick: each device uploads K scalars plus one 64-bit seed and
    downloads the masked model (32*d*n bits). full-vector: the device uploads
    its whole n-dimensional estimate instead.
    """
    if not 0 < d <= 1:
        raise ValueError(f"density must be in (0, 1], got {d}")
    down = devices * int(round(_FLOAT_BITS * d * n))
    if mode == "seed-trick":
        up = devices * (_FLOAT_BITS * k + _SEED_BITS)
    elif mode == "full-vector":
        up = devices * _FLOAT_BITS * n
    else:
        raise ValueError(f"unknown comm mode {mode!r}")
    return up, down


def comm_pruning_phase_worst_case(n: int, d: float, t_p: int) -> int:
    """Per-device bits of a real-data pruning phase: model broadcast every
    round plus the final masked-model download."""
    return _FLOAT_BITS * t_p * n + int(round(_FLOAT_BITS * d * n))


def peak_memory_model(spec: list[LayerSpec], input_shape: tuple, batch: int,
                      mode: str, density: float = 1.0) -> int:
    """Modeled peak bytes on a device during one pass.

    backprop: parameters, every retained activation (layer inputs plus
    logits), and gradient buffers for both. bp-free: the density-scaled
    parameters (plus a 1-bit mask), the largest single layer's input+output
    activations (layer-by-layer execution; elementwise layers run in place),
    and one perturbation segment.
    """
    if not 0 < density <= 1:
        raise ValueError(f"density must be in (0, 1], got {density}")
    segs, n = build_segments(list(spec))
    shapes = infer_shapes(list(spec), tuple(input_shape))
    act_sizes = [int(np.prod(input_shape))] + [int(np.prod(s)) for s in shapes]

    if mode == "backprop":
        acts = batch * sum(act_sizes) * _FLOAT_BYTES
        par = n * _FLOAT_BYTES
        grads = acts + par
        return par + acts + grads
    if mode == "bp-free":
        par = int(density * n) * _FLOAT_BYTES + (n + 7) // 8  # params + packed mask
        live = 0
        for i, layer in enumerate(spec):
            if layer.kind in ("relu", "flatten"):
                live = max(live, act_sizes[i])  # in-place / view
            else:
                live = max(live, act_sizes[i] + act_sizes[i + 1])
        live *= batch * _FLOAT_BYTES
        pert = max((s.size for s in segs), default=0) * _FLOAT_BYTES
        return par + live + pert
    raise ValueError(f"unknown memory mode {mode!r}")
