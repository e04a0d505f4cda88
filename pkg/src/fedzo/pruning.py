"""Foresight pruning driven by a finite-difference NTK trace-norm surrogate.

Each pruning round perturbs the surviving weights with Gaussian noise, measures
the squared output displacement on probe batches (device data or synthetic
standard-Gaussian probes), and scores every parameter by how much deactivating
it would change that statistic. An exponential density schedule d^(t/T_p)
anneals the mask toward the target density without layer collapse.

The perturbed forward acts as a frozen reference: the saliency derivative flows
only through the unperturbed branch. That keeps the score of a zero weight at
exactly zero and makes the mask-side derivative equal the weight-side
derivative times the weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LayerCollapseError
from .layers import ModelDef
from .network import backward_logits, model_forward
from .params import Mask, ModelParams, prunable_index
from .rng import SeededRng


@dataclass(frozen=True)
class ProbeBatch:
    inputs: np.ndarray
    origin: str  # "real-device:<i>" | "synthetic-gaussian"


@dataclass(frozen=True)
class SaliencyReport:
    scores: np.ndarray
    round: int
    threshold: float


def default_eps(params: ModelParams, scale: float = 0.01) -> np.ndarray:
    """Per-coordinate perturbation std: scale * std of the layer's init weights.

    Bias coordinates inherit their layer's weight scale; layers of different
    fan-in get proportionate perturbations.
    """
    eps = np.zeros(params.n)
    layer_std = {}
    for seg in params.segments:
        if seg.prunable:
            layer_std[seg.layer] = float(params.flat[seg.offset:seg.offset + seg.size].std())
    for seg in params.segments:
        eps[seg.offset:seg.offset + seg.size] = scale * layer_std.get(seg.layer, 1.0)
    return eps


def _draw_dw(rng: SeededRng, n: int, eps, mask: Mask) -> np.ndarray:
    dw = rng.gaussian(n, 1.0) * eps
    return dw * mask.bits


def fd_squared_norm(model: ModelDef, params: ModelParams, mask: Mask,
                    probe: ProbeBatch, eps, rng: SeededRng) -> float:
    """||f(x; W*m) - f(x; (W+dW)*m)||_2^2 with dW ~ N(0, eps^2 I) from rng.

    Two forward passes, no gradients; runnable on a device. eps may be a scalar
    or a per-coordinate vector; eps == 0 is the degenerate zero-perturbation
    case and returns 0.
    """
    if np.all(np.asarray(eps) == 0):
        return 0.0
    dw = _draw_dw(rng, params.n, eps, mask)
    f1 = model_forward(model.spec, params, mask, probe.inputs)
    f2 = model_forward(model.spec, params.with_flat(params.flat + dw), mask, probe.inputs)
    return float(np.sum((f1 - f2) ** 2))


def saliency_scores(model: ModelDef, params: ModelParams, mask: Mask,
                    probes: list[ProbeBatch], eps, mc_samples: int,
                    rng: SeededRng, round_index: int = 0) -> SaliencyReport:
    """Scores |dI/dW_j * W_j| where I averages the probe displacement statistic.

    The expectation over dW is approximated with mc_samples draws. The reverse
    sweep runs on the server; devices only ever contribute forward-pass
    statistics.
    """
    if not probes:
        raise ValueError("empty probe list")
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    grad = np.zeros(params.n)
    for s in range(mc_samples):
        dw = _draw_dw(rng.stream("dW", s), params.n, eps, mask)
        perturbed = params.with_flat(params.flat + dw)
        for probe in probes:
            ref = model_forward(model.spec, perturbed, mask, probe.inputs)
            logits, trace = model_forward(model.spec, params, mask, probe.inputs,
                                          "trace")
            # d/dW of ||logits - ref||^2 with ref held constant
            grad += backward_logits(model.spec, params, mask, trace,
                                    2.0 * (logits - ref))
    grad /= mc_samples * len(probes)
    scores = np.abs(grad * params.flat)
    return SaliencyReport(scores=scores, round=round_index, threshold=float("nan"))


def prune_round(report: SaliencyReport, mask: Mask, t: int, t_p: int, d: float) -> Mask:
    """One mask update of the exponential schedule.

    After round t the surviving prunable fraction is d^(t/T_p) (within one
    element). Masks only shrink; the lowest-scoring surviving weights go first,
    ties broken toward keeping the lower flat index.
    """
    if not 0 < d <= 1:
        raise ValueError(f"target density must be in (0, 1], got {d}")
    if not 1 <= t <= t_p:
        raise ValueError(f"round {t} outside [1, {t_p}]")
    frac = d ** (t / t_p)
    if frac >= 1.0:
        return mask
    prunable = prunable_index(mask.segments, mask.n)
    target = int(round(frac * prunable.sum()))
    surviving = np.flatnonzero(prunable & (mask.bits == 1))
    if target >= surviving.size:
        return mask
    scores = report.scores[surviving]
    # descending score, ascending flat index among ties; keep the top `target`
    order = np.lexsort((surviving, -scores))
    keep = surviving[order[:target]]
    bits = np.array(mask.bits)
    bits[surviving] = 0
    bits[keep] = 1
    tau = float(scores[order[target - 1]]) if target > 0 else float("inf")
    new_mask = mask.with_bits(bits)
    for layer, dens in new_mask.layer_weight_density().items():
        if dens == 0.0:
            raise LayerCollapseError(layer, "weight")
    return new_mask


def _device_probe(dataset_inputs: np.ndarray, indices: np.ndarray,
                  batch: int, rng: SeededRng, input_shape: tuple) -> np.ndarray:
    gen = rng.generator()
    take = gen.choice(indices, size=min(batch, indices.size), replace=False)
    return dataset_inputs[np.sort(take)].reshape(-1, *input_shape)


def run_foresight_pruning(mode: str, model: ModelDef, params: ModelParams,
                          t_p: int, d: float, g_p: int, eps, rng: SeededRng,
                          partitions=None, dataset=None, mc_samples: int = 1,
                          probe_batch: int = 256, ledger=None,
                          on_round=None) -> Mask:
    """Algorithm: T_p rounds of probe -> saliency -> threshold -> mask update.

    mode "real-data": G_p sampled devices evaluate the displacement statistic
    on their own data and upload scalars (model broadcast charged downstream).
    mode "data-free": probes are server-side standard Gaussians in the model's
    input shape; devices transmit nothing.
    """
    if mode not in ("real-data", "data-free"):
        raise ValueError(f"unknown pruning mode {mode!r}")
    from .params import Mask as _Mask
    mask = _Mask.ones(params.segments)
    if d >= 1.0 or t_p == 0:
        return mask
    if mode == "real-data" and (partitions is None or dataset is None):
        raise ValueError("real-data pruning needs partitions and a dataset")

    for t in range(1, t_p + 1):
        if mode == "real-data":
            gen = rng.stream("prune-select", t).generator()
            chosen = np.sort(gen.choice(len(partitions), size=min(g_p, len(partitions)),
                                        replace=False))
            probes = []
            for i in chosen:
                x = _device_probe(dataset.inputs, partitions[i].indices, probe_batch,
                                  rng.stream("probe", t, int(i)), model.input_shape)
                probes.append(ProbeBatch(x, f"real-device:{i}"))
            if ledger is not None:
                # devices upload one 32-bit scalar each; server broadcasts the model
                ledger.add_comm(up_bits=32 * len(chosen),
                                down_bits=32 * params.n * len(chosen))
        else:
            x = rng.stream("probe", t).gaussian(probe_batch * int(np.prod(model.input_shape)))
            probes = [ProbeBatch(x.reshape(probe_batch, *model.input_shape),
                                 "synthetic-gaussian")]

        report = saliency_scores(model, params, mask, probes, eps, mc_samples,
                                 rng.stream("saliency", t), round_index=t)
        mask = prune_round(report, mask, t, t_p, d)
        if on_round is not None:
            on_round(t, mask)
    return mask
