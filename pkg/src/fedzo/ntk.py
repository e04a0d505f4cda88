"""Local NTK trace norms and a brute-force federated-NTK oracle.

The local NTK of a device is the Gram matrix of per-sample output Jacobians.
Its nuclear norm equals its trace, i.e. the squared Frobenius norm of the
Jacobian, which is what the trace-norm surrogate in the pruning module tracks.
The federated NTK pads the per-device blocks into an asymmetric N_max x N_sum
concatenation; its nuclear norm is bounded by the sum of the local ones.

Everything here is an oracle for tiny nets: sizes are guarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import ModelDef
from .network import backward_logits, model_forward
from .params import Mask, ModelParams

_TRACE_GUARD = 100_000          # n * N_i for local traces
_ORACLE_GUARD = 256             # N_sum for the explicit SVD oracle


@dataclass(frozen=True)
class LocalNtkSummary:
    device: int
    trace_norm: float
    sample_count: int


def output_jacobian(model: ModelDef, params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Explicit Jacobian, shape (N, C, n): one reverse sweep per (sample, class)."""
    mask = Mask.ones(params.segments)
    n_samples = batch.shape[0]
    logits, _ = model_forward(model.spec, params, mask, batch[:1], "trace")
    classes = logits.shape[1]
    jac = np.zeros((n_samples, classes, params.n))
    for a in range(n_samples):
        _, trace = model_forward(model.spec, params, mask, batch[a:a + 1], "trace")
        for c in range(classes):
            dlogits = np.zeros((1, classes))
            dlogits[0, c] = 1.0
            jac[a, c] = backward_logits(model.spec, params, mask, trace, dlogits)
    return jac


def local_ntk_trace(model: ModelDef, params: ModelParams, device_batch: np.ndarray,
                    device: int = 0) -> LocalNtkSummary:
    """Trace norm of the device's NTK: sum over samples/outputs of ||grad||^2."""
    n_samples = device_batch.shape[0]
    if params.n * n_samples > _TRACE_GUARD:
        raise ValueError(f"size guard exceeded: n*N_i = {params.n * n_samples} "
                         f"> {_TRACE_GUARD}")
    jac = output_jacobian(model, params, device_batch)
    return LocalNtkSummary(device=device,
                           trace_norm=float(np.sum(jac ** 2)),
                           sample_count=n_samples)


def local_ntk_matrix(jac: np.ndarray) -> np.ndarray:
    """N_i x N_i Gram matrix from a (N_i, C, n) Jacobian."""
    g = jac.reshape(jac.shape[0], -1)
    return g @ g.T


def flntk_oracle(jacobians: list[np.ndarray]) -> tuple[float, float]:
    """Both sides of the triangle bound on the padded federated NTK.

    Builds the N_max x N_sum concatenation of per-device Gram blocks
    explicitly, returns (nuclear norm of it, sum of local nuclear norms).
    """
    counts = [j.shape[0] for j in jacobians]
    n_sum = sum(counts)
    if n_sum > _ORACLE_GUARD:
        raise ValueError(f"size guard exceeded: N_sum = {n_sum} > {_ORACLE_GUARD}")
    n_max = max(counts)
    fl = np.zeros((n_max, n_sum))
    off = 0
    local_sum = 0.0
    for j in jacobians:
        theta = local_ntk_matrix(j)
        ni = theta.shape[0]
        fl[:ni, off:off + ni] = theta
        off += ni
        local_sum += float(np.linalg.svd(theta, compute_uv=False).sum())
    fl_nuc = float(np.linalg.svd(fl, compute_uv=False).sum())
    return fl_nuc, local_sum
