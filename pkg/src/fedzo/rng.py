"""Deterministic counter-based random streams.

Every random draw in the package flows through a SeededRng, a (seed, stream_id)
pair backed by the Philox counter-based bit generator. Identical pairs yield
bit-identical sequences on any platform or thread schedule, which is what lets
the server regenerate device-side Gaussian perturbations from a transmitted
seed alone. Substreams are derived by hashing labels/indices into the stream
id, so device i / round t / sample k never share a sequential state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _fmix64(x: int) -> int:
    """splitmix64 finalizer; good avalanche for stream derivation."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def mix_stream(base: int, *parts) -> int:
    """Fold integers or short strings into a 64-bit stream id."""
    h = base & _MASK64
    for p in parts:
        if isinstance(p, str):
            for ch in p.encode():
                h = _fmix64(h + _GOLDEN + ch)
        else:
            h = _fmix64(h + _GOLDEN + (int(p) & _MASK64))
    return h


@dataclass(frozen=True)
class SeededRng:
    """Immutable handle on a deterministic random stream."""

    seed: int
    stream_id: int = 0

    def stream(self, *parts) -> "SeededRng":
        """Derive an independent substream labeled by `parts`."""
        return SeededRng(self.seed, mix_stream(self.stream_id, *parts))

    def generator(self) -> np.random.Generator:
        key = ((self.stream_id & _MASK64) << 64) | (self.seed & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def gaussian(self, length: int, sigma: float = 1.0) -> np.ndarray:
        """`length` i.i.d. N(0, sigma^2) draws as float64.

        A fixed standard-normal stream is scaled by sigma, so changing sigma
        rescales (never reshuffles) the output for a given (seed, stream_id).
        """
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        return self.generator().standard_normal(length) * sigma


def seeded_gaussian(rng: SeededRng, length: int, sigma: float) -> np.ndarray:
    """Module-level alias for SeededRng.gaussian."""
    return rng.gaussian(length, sigma)
