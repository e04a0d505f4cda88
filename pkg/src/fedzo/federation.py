"""The federated round engine: device sampling, the scalars-plus-seed upload
protocol, gradient-free server aggregation, and a backprop FedAvg baseline.

Everything is simulated in process and is a pure function of the experiment
config: device work is evaluated sequentially in ascending device id, but
each device's randomness comes from its own counter-based stream, so any
parallel schedule would produce the same bits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .accounting import CostLedger, comm_training_round, peak_memory_model
from .config import ExperimentConfig
from .datasets import DatasetHandle, gen_synthetic_pair, load_cifar10
from .errors import ConfigError
from .layers import ModelDef, model_by_name
from .network import (accuracy, backward_params, count_forward_flops,
                      cross_entropy_loss, model_forward)
from .params import Mask, ModelParams, init_params
from .partition import ClientPartition, dirichlet_partition
from .pruning import default_eps, run_foresight_pruning
from .rng import SeededRng
from .zo import PerturbationSpec, delta_losses, stein_estimate


@dataclass(frozen=True)
class RoundPlan:
    round: int
    selected: tuple
    pspecs: dict  # device id -> PerturbationSpec


@dataclass
class ServerState:
    params: ModelParams
    mask: Mask
    momentum_buffer: np.ndarray
    lr: float
    round: int = 0


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    phase: str
    loss: float
    accuracy: float
    flops_cum: float
    up_bits: int
    down_bits: int
    peak_mem_model_bytes: int


CSV_HEADER = "round,phase,loss,accuracy,flops_cum,up_bits,down_bits,peak_mem_model_bytes"


def make_round_plan(rng: SeededRng, t: int, device_count: int, group: int,
                    k: int, sigma: float) -> RoundPlan:
    gen = rng.stream("select", t).generator()
    selected = tuple(sorted(int(i) for i in
                            gen.choice(device_count, size=min(group, device_count),
                                       replace=False)))
    pspecs = {i: PerturbationSpec(rng.stream("perturb", t, i), sigma, k)
              for i in selected}
    return RoundPlan(round=t, selected=selected, pspecs=pspecs)


def _device_batch(dataset: DatasetHandle, part: ClientPartition, batch_size: int,
                  rng: SeededRng, input_shape: tuple):
    gen = rng.generator()
    take = gen.choice(part.indices, size=min(batch_size, part.size), replace=False)
    take = np.sort(take)
    return dataset.inputs[take].reshape(-1, *input_shape), dataset.labels[take]


def run_training_round(model: ModelDef, state: ServerState, plan: RoundPlan,
                       partitions: list[ClientPartition], dataset: DatasetHandle,
                       batch_size: int, rng: SeededRng, ledger: CostLedger,
                       comm_mode: str = "seed-trick", momentum: float = 0.9,
                       weight_decay: float = 1e-3, lr_decay: float = 0.998,
                       dropout_prob: float = 0.0, central: bool = False) -> None:
    """One gradient-free round: devices upload loss-difference scalars, the
    server regenerates their perturbations and applies momentum SGD on the
    unmasked coordinates."""
    t = plan.round
    gen = rng.stream("dropout", t).generator()
    survivors = [i for i in plan.selected
                 if dropout_prob == 0.0 or gen.random() >= dropout_prob]
    if survivors:
        n_total = sum(partitions[i].size for i in survivors)
        grad = np.zeros(state.params.n)
        for i in survivors:  # ascending device id: deterministic reduction order
            pspec = plan.pspecs[i]
            x, y = _device_batch(dataset, partitions[i], batch_size,
                                 rng.stream("batch", t, i), model.input_shape)
            dlv = delta_losses(model.spec, state.params, state.mask, x, y,
                               pspec, central=central)
            if comm_mode == "full-vector":
                # oracle path: the device uploads its full estimate
                deltas = [pspec.delta(k, state.params.n, state.mask.bits)
                          for k in range(pspec.k)]
                contrib = np.zeros(state.params.n)
                for k in range(pspec.k):
                    contrib += deltas[k] * dlv[k]
                contrib /= pspec.k * pspec.sigma ** 2
            else:
                contrib = stein_estimate(dlv, pspec, state.params.n, state.mask.bits)
            grad += (partitions[i].size / n_total) * contrib

        grad += weight_decay * (state.params.flat * state.mask.bits)
        state.momentum_buffer = momentum * state.momentum_buffer + grad
        state.params = state.params.with_flat(
            state.params.flat - state.lr * state.momentum_buffer)

    forwards = (2 * plan.pspecs[plan.selected[0]].k + 1 if central
                else plan.pspecs[plan.selected[0]].k + 1) if plan.selected else 0
    per_sample = count_forward_flops(list(model.spec), model.input_shape,
                                     state.mask.layer_weight_density())
    ledger.add_flops(len(survivors) * forwards * batch_size * per_sample)
    k = plan.pspecs[plan.selected[0]].k if plan.selected else 0
    up, down = comm_training_round(state.params.n, max(state.mask.density, 1e-12),
                                   k, comm_mode, devices=len(survivors))
    ledger.add_comm(up, down)
    ledger.observe_mem(peak_memory_model(list(model.spec), model.input_shape,
                                         batch_size, "bp-free", state.mask.density))
    state.lr *= lr_decay
    state.round = t


def run_fedavg_baseline(model: ModelDef, state: ServerState, plan: RoundPlan,
                        partitions: list[ClientPartition], dataset: DatasetHandle,
                        epochs: int, batch_size: int, rng: SeededRng,
                        ledger: CostLedger, lr_decay: float = 0.998,
                        dropout_prob: float = 0.0) -> None:
    """Backprop baseline: local SGD epochs then a sample-weighted average."""
    t = plan.round
    gen = rng.stream("dropout", t).generator()
    survivors = [i for i in plan.selected
                 if dropout_prob == 0.0 or gen.random() >= dropout_prob]
    batches = 0
    if survivors and epochs > 0:
        n_total = sum(partitions[i].size for i in survivors)
        new_flat = np.zeros(state.params.n)
        for i in survivors:
            local = state.params
            bgen = rng.stream("local", t, i).generator()
            for ep in range(epochs):
                order = bgen.permutation(partitions[i].indices)
                for lo in range(0, order.size, batch_size):
                    take = np.sort(order[lo:lo + batch_size])
                    x = dataset.inputs[take].reshape(-1, *model.input_shape)
                    y = dataset.labels[take]
                    _, trace = model_forward(model.spec, local, state.mask, x, "trace")
                    g = backward_params(model.spec, local, state.mask, trace, y)
                    local = local.with_flat(local.flat
                                            - state.lr * g * state.mask.bits)
                    batches += 1
            new_flat += (partitions[i].size / n_total) * local.flat
        state.params = state.params.with_flat(new_flat)

    per_sample = count_forward_flops(list(model.spec), model.input_shape,
                                     state.mask.layer_weight_density())
    # one forward plus a backward at ~2x forward cost per batch
    ledger.add_flops(3 * batches * batch_size * per_sample)
    dn = int(round(32 * state.mask.density * state.params.n))
    ledger.add_comm(up_bits=dn * len(survivors), down_bits=dn * len(survivors))
    ledger.observe_mem(peak_memory_model(list(model.spec), model.input_shape,
                                         batch_size, "backprop"))
    state.lr *= lr_decay
    state.round = t


def evaluate(model: ModelDef, params: ModelParams, mask: Mask,
             inputs: np.ndarray, labels: np.ndarray, chunk: int = 512):
    losses, hits, n = 0.0, 0.0, inputs.shape[0]
    for lo in range(0, n, chunk):
        x = inputs[lo:lo + chunk].reshape(-1, *model.input_shape)
        y = labels[lo:lo + chunk]
        logits = model_forward(model.spec, params, mask, x)
        losses += cross_entropy_loss(logits, y) * len(y)
        hits += accuracy(logits, y) * len(y)
    return losses / n, hits / n


@dataclass
class ExperimentResult:
    metrics: list
    state: ServerState
    model: ModelDef
    config: ExperimentConfig
    ledger: CostLedger = field(default_factory=CostLedger)


def _load_data(config: ExperimentConfig, rng: SeededRng):
    if config.dataset == "cifar10":
        return load_cifar10(config.resolved_data_dir())
    # synthetic: train and test share class means but have independent noise
    return gen_synthetic_pair(config.classes, config.dims, config.per_class,
                              config.test_per_class, config.separation,
                              rng.stream("data"))


def run_experiment(config: ExperimentConfig, mask: Mask | None = None,
                   prune_only: bool = False) -> ExperimentResult:
    """Two-phase run: foresight pruning (unless a mask is supplied or density
    is 1), then T_t rounds of training. Deterministic given the config."""
    config.validate()
    model = model_by_name(config.model, config.classes, dims=config.dims)
    rng = SeededRng(config.seed)
    train, test = _load_data(config, rng)
    if int(np.prod(model.input_shape)) != int(np.prod(train.inputs.shape[1:])):
        raise ConfigError(f"model {config.model} input shape {model.input_shape} "
                          f"does not match dataset sample shape {train.inputs.shape[1:]}")
    partitions = dirichlet_partition(train.labels, config.devices, config.beta,
                                     rng.stream("partition"))
    params = init_params(model, rng.stream("model"))
    ledger = CostLedger()
    metrics: list[RoundMetrics] = []

    egen = rng.stream("eval").generator()
    eval_idx = np.sort(egen.choice(test.size, size=min(config.eval_size, test.size),
                                   replace=False))
    eval_x, eval_y = test.inputs[eval_idx], test.labels[eval_idx]

    def record(t, phase, p, m):
        loss, acc = evaluate(model, p, m, eval_x, eval_y)
        metrics.append(RoundMetrics(t, phase, loss, acc, ledger.flops,
                                    ledger.up_bits, ledger.down_bits,
                                    ledger.peak_mem_bytes))

    if mask is None:
        if config.density < 1.0 and config.t_p > 0:
            eps = default_eps(params, config.eps_scale)

            def on_round(t, m):
                record(t, "prune", params, m)

            mask = run_foresight_pruning(
                config.prune_mode, model, params, config.t_p, config.density,
                config.g_p, eps, rng.stream("pruning"),
                partitions=partitions, dataset=train,
                mc_samples=config.mc_samples, probe_batch=config.probe_batch,
                ledger=ledger, on_round=on_round)
        else:
            mask = Mask.ones(params.segments)

    state = ServerState(params=params, mask=mask,
                        momentum_buffer=np.zeros(params.n), lr=config.lr)
    if prune_only:
        return ExperimentResult(metrics, state, model, config, ledger)

    for t in range(1, config.t_t + 1):
        if config.flops_budget > 0 and ledger.flops >= config.flops_budget:
            break
        plan = make_round_plan(rng.stream("training"), t, config.devices,
                               config.g_t, config.k, config.sigma)
        if config.method == "fedavg":
            run_fedavg_baseline(model, state, plan, partitions, train,
                                config.local_epochs, config.batch_size,
                                rng.stream("training"), ledger,
                                lr_decay=config.lr_decay,
                                dropout_prob=config.dropout_prob)
        else:
            run_training_round(model, state, plan, partitions, train,
                               config.batch_size, rng.stream("training"), ledger,
                               comm_mode=config.comm_mode,
                               momentum=config.momentum,
                               weight_decay=config.weight_decay,
                               lr_decay=config.lr_decay,
                               dropout_prob=config.dropout_prob,
                               central=config.central_diff)
        record(t, "train", state.params, state.mask)
    return ExperimentResult(metrics, state, model, config, ledger)
