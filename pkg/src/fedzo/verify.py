"""Built-in self-checks behind `fedzo verify`.

A curated subset of the test suite's oracles, small enough to run in seconds:
each check prints one pass/fail line and the command exits 0 only if all pass.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .config import ExperimentConfig
from .federation import run_experiment
from .layers import synth_dense
from .network import backward_params, cross_entropy_loss, model_forward
from .ntk import flntk_oracle, output_jacobian
from .params import Mask, init_params
from .pruning import default_eps
from .rng import SeededRng
from .zo import PerturbationSpec, covariance_deviation, stein_estimate


def _tiny_config(**overrides) -> ExperimentConfig:
    base = dict(seed=11, model="synth-dense", classes=4, dims=32, per_class=30,
                test_per_class=10, devices=4, g_p=2, g_t=2, t_p=4, t_t=6,
                density=0.5, k=8, batch_size=8, probe_batch=16, eval_size=40)
    base.update(overrides)
    return ExperimentConfig(**base)


def check_gradients() -> bool:
    model = synth_dense(dims=6, classes=3, hidden=5)
    rng = SeededRng(3)
    params = init_params(model, rng)
    mask = Mask.ones(params.segments)
    x = rng.stream("x").gaussian(8 * 6).reshape(8, 6)
    y = np.arange(8) % 3
    _, trace = model_forward(model.spec, params, mask, x, "trace")
    g = backward_params(model.spec, params, mask, trace, y)
    h = 1e-5
    worst = 0.0
    for j in range(params.n):
        up = np.array(params.flat)
        up[j] += h
        dn = np.array(params.flat)
        dn[j] -= h
        fd = (cross_entropy_loss(model_forward(model.spec, params.with_flat(up), mask, x), y)
              - cross_entropy_loss(model_forward(model.spec, params.with_flat(dn), mask, x), y)) / (2 * h)
        worst = max(worst, abs(g[j] - fd) / max(abs(fd), 1e-8))
    return worst < 1e-4


def check_estimator() -> bool:
    n, k = 16, 20_000
    rng = SeededRng(5)
    w = rng.stream("w").gaussian(n)
    pspec = PerturbationSpec(rng.stream("p"), 1e-3, k)
    # quadratic loss 0.5||W||^2: dlv_k = delta.W + 0.5||delta||^2
    dlv = np.array([pspec.delta(i, n) @ w + 0.5 * pspec.delta(i, n) @ pspec.delta(i, n)
                    for i in range(k)])
    est = stein_estimate(dlv, pspec, n)
    return np.linalg.norm(est - w) / np.linalg.norm(w) < 0.1


def check_covariance_bound() -> bool:
    rng = SeededRng(9)
    n = 20
    devs = [covariance_deviation(PerturbationSpec(rng.stream(k), 1.0, k), n)
            for k in (200, 2000)]
    return devs[1] < devs[0] and devs[1] <= 5 * np.sqrt(n / 2000)


def check_seed_trick() -> bool:
    a = run_experiment(_tiny_config(comm_mode="seed-trick"))
    b = run_experiment(_tiny_config(comm_mode="full-vector"))
    return bool(np.array_equal(a.state.params.flat, b.state.params.flat))


def check_density_schedule() -> bool:
    res = run_experiment(_tiny_config(t_t=0), prune_only=True)
    dens = res.state.mask.prunable_density()
    from .params import prunable_index
    total = prunable_index(res.state.params.segments, res.state.params.n).sum()
    return abs(dens * total - 0.5 * total) <= 1.0


def check_triangle_bound() -> bool:
    rng = SeededRng(17)
    model = synth_dense(dims=4, classes=3, hidden=4)
    jacs = []
    for i in range(3):
        params = init_params(model, rng.stream(i))
        x = rng.stream("x", i).gaussian((3 + i) * 4).reshape(3 + i, 4)
        jacs.append(output_jacobian(model, params, x))
    fl, local = flntk_oracle(jacs)
    return fl <= local + 1e-9


def check_determinism() -> bool:
    a = run_experiment(_tiny_config())
    b = run_experiment(_tiny_config())
    return (np.array_equal(a.state.params.flat, b.state.params.flat)
            and a.metrics == b.metrics)


_CHECKS = [
    ("gradient vs central differences", check_gradients, False),
    ("zeroth-order estimate on quadratic loss", check_estimator, True),
    ("covariance deviation shrinks with K", check_covariance_bound, True),
    ("seed-trick matches full-vector upload", check_seed_trick, False),
    ("exponential density schedule", check_density_schedule, False),
    ("federated NTK triangle bound", check_triangle_bound, False),
    ("experiment determinism", check_determinism, False),
]


def run_all(fast: bool = False) -> int:
    failures = 0
    for name, fn, slow in _CHECKS:
        if fast and slow:
            print(f"SKIP {name}")
            continue
        ok = False
        try:
            ok = fn()
        except Exception as exc:  # report, keep going
            print(f"FAIL {name}: {type(exc).__name__}: {exc}")
            failures += 1
            continue
        print(("PASS " if ok else "FAIL ") + name)
        failures += 0 if ok else 1
    return 0 if failures == 0 else 2
