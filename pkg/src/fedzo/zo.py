"""Gaussian-smoothing zeroth-order gradient estimation and its diagnostics.

A PerturbationSpec (rng, sigma, K) is the complete shared contract between a
device and the server: perturbation k is regenerated as an independent
substream of the PerturbationSpec's rng, so a device can upload K scalars
and the server can rebuild every perturbation vector bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError
from .network import cross_entropy_loss, model_forward
from .params import Mask, ModelParams
from .rng import SeededRng


@dataclass(frozen=True)
class PerturbationSpec:
    rng: SeededRng
    sigma: float
    k: int

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    def delta(self, sample: int, n: int, mask_bits: np.ndarray | None = None) -> np.ndarray:
        """Perturbation vector for Monte-Carlo sample `sample`, N(0, sigma^2 I).

        When mask bits are given, only the surviving coordinates are drawn
        (and scattered into a zero vector): the effective dimension of the
        perturbation is ||m||_0, and pruned coordinates are never touched.
        Both server and device derive the draw from the same (rng, mask), so
        the vectors stay bit-identical across the wire.
        """
        stream = self.rng.stream("delta", sample)
        if mask_bits is None:
            return stream.gaussian(n, self.sigma)
        live = np.flatnonzero(mask_bits)
        d = np.zeros(n)
        d[live] = stream.gaussian(live.size, self.sigma)
        return d


def delta_losses(spec, params: ModelParams, mask: Mask | None, batch_x: np.ndarray,
                 batch_y: np.ndarray, pspec: PerturbationSpec,
                 central: bool = False) -> np.ndarray:
    """K loss differences L(W + delta_k) - L(W) on one local mini-batch.

    The base loss is evaluated once and reused across all K samples (K+1
    forwards total; 2K+1 with the central-difference variant).
    """
    mask_bits = mask.bits if mask is not None else None
    base = cross_entropy_loss(model_forward(spec, params, mask, batch_x), batch_y)
    out = np.empty(pspec.k)
    for k in range(pspec.k):
        d = pspec.delta(k, params.n, mask_bits)
        lp = cross_entropy_loss(
            model_forward(spec, params.with_flat(params.flat + d), mask, batch_x),
            batch_y)
        if central:
            lm = cross_entropy_loss(
                model_forward(spec, params.with_flat(params.flat - d), mask, batch_x),
                batch_y)
            out[k] = (lp - lm) / 2.0
        else:
            out[k] = lp - base
        if not np.isfinite(out[k]):
            raise NonFiniteError(f"non-finite loss difference at sample {k}")
    return out


def stein_estimate(dlv: np.ndarray, pspec: PerturbationSpec, n: int,
                   mask_bits: np.ndarray | None = None) -> np.ndarray:
    """(1/K) sum_k (delta_k / sigma^2) * dlv[k], deltas regenerated from pspec."""
    dlv = np.asarray(dlv, dtype=np.float64)
    if dlv.shape != (pspec.k,):
        raise ValueError(f"dlv length {dlv.shape} != K={pspec.k}")
    g = np.zeros(n)
    for k in range(pspec.k):
        g += pspec.delta(k, n, mask_bits) * dlv[k]
    return g / (pspec.k * pspec.sigma ** 2)


def covariance_deviation(pspec: PerturbationSpec, n: int) -> float:
    """Spectral norm of Sigma_hat - I, Sigma_hat = (1/(K sigma^2)) sum delta delta^T.

    This is the estimation-error statistic: it concentrates like sqrt(n/K).
    """
    s = np.zeros((n, n))
    chunk = max(1, min(pspec.k, 4_000_000 // max(n, 1)))
    k = 0
    while k < pspec.k:
        hi = min(k + chunk, pspec.k)
        d = np.stack([pspec.delta(i, n) for i in range(k, hi)])
        s += d.T @ d
        k = hi
    a = s / (pspec.k * pspec.sigma ** 2) - np.eye(n)
    return _spectral_norm(a)


def _spectral_norm(a: np.ndarray, tol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Power iteration on a^T a; deterministic start vector."""
    n = a.shape[0]
    b = a.T @ a
    v = np.ones(n) + np.arange(n) / n  # avoid symmetry-orthogonal starts
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = b @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(nw - lam) <= tol * max(nw, 1.0):
            lam = nw
            break
        lam = nw
    return float(np.sqrt(lam))


def fd_directional(lossfn, flat: np.ndarray, direction: np.ndarray, step: float) -> float:
    """One-sided difference L(W + step*dir) - L(W)."""
    if step == 0:
        raise ValueError("step must be nonzero")
    return float(lossfn(flat + step * direction) - lossfn(flat))
