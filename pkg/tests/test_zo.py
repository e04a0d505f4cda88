import numpy as np
import pytest

from fedzo.errors import NonFiniteError
from fedzo.layers import synth_dense
from fedzo.network import cross_entropy_loss, model_forward
from fedzo.params import Mask, init_params
from fedzo.rng import SeededRng
from fedzo.zo import (PerturbationSpec, covariance_deviation, delta_losses,
                      fd_directional, stein_estimate)


def pspec(seed=0, sigma=1e-3, k=8):
    return PerturbationSpec(SeededRng(seed, 17), sigma, k)


def test_delta_regeneration_bit_identical():
    p = pspec()
    a = p.delta(3, 100)
    b = p.delta(3, 100)
    assert np.array_equal(a, b)


def test_delta_samples_independent():
    p = pspec()
    assert not np.array_equal(p.delta(0, 50), p.delta(1, 50))


def test_delta_scale_matches_sigma():
    # delta(sigma) == sigma/sigma' * delta(sigma') exactly: same unit draws
    a = PerturbationSpec(SeededRng(1, 2), 1e-3, 4).delta(0, 1000)
    b = PerturbationSpec(SeededRng(1, 2), 2e-3, 4).delta(0, 1000)
    assert np.array_equal(2 * a, b)


def test_masked_delta_zero_outside_support():
    bits = np.zeros(40)
    bits[::3] = 1
    d = pspec().delta(0, 40, bits)
    assert np.all(d[bits == 0] == 0)
    assert np.all(d[bits == 1] != 0)


def test_stein_on_quadratic_loss():
    # f(w) = 0.5 w'Aw + b'w with grad Aw+b; the oracle is the exact
    # Stein sum computed directly from the same deltas
    n, k, sigma = 12, 4000, 1e-4
    gen = SeededRng(5).generator()
    a = gen.standard_normal((n, n))
    a = a @ a.T / n
    b = gen.standard_normal(n)
    w = gen.standard_normal(n)

    def loss(v):
        return 0.5 * v @ a @ v + b @ v

    p = pspec(seed=6, sigma=sigma, k=k)
    dlv = np.array([loss(w + p.delta(i, n)) - loss(w) for i in range(k)])
    est = stein_estimate(dlv, p, n)
    true = a @ w + b
    assert np.linalg.norm(est - true) / np.linalg.norm(true) < 0.1


def test_stein_exact_oracle_replay():
    n, k = 6, 10
    p = pspec(seed=7, k=k)
    dlv = SeededRng(8).gaussian(k)
    est = stein_estimate(dlv, p, n)
    acc = np.zeros(n)
    for i in range(k):
        acc += p.delta(i, n) * dlv[i]
    assert np.array_equal(est, acc / (k * p.sigma ** 2))


def test_stein_respects_mask():
    n, k = 10, 5
    bits = np.zeros(n)
    bits[:4] = 1
    p = pspec(seed=9, k=k)
    dlv = SeededRng(10).gaussian(k)
    est = stein_estimate(dlv, p, n, bits)
    assert np.all(est[bits == 0] == 0)


def test_delta_losses_matches_manual_forward():
    model = synth_dense(dims=5, classes=3, hidden=4)
    params = init_params(model, SeededRng(11))
    mask = Mask.ones(params.segments)
    x = SeededRng(12).gaussian(4 * 5).reshape(4, 5)
    y = np.array([0, 1, 2, 0])
    p = pspec(seed=13, k=3)
    dlv = delta_losses(model.spec, params, mask, x, y, p)
    base = cross_entropy_loss(model_forward(model.spec, params, mask, x), y)
    for i in range(3):
        shifted = params.with_flat(params.flat + p.delta(i, params.n, mask.bits))
        li = cross_entropy_loss(model_forward(model.spec, shifted, mask, x), y)
        assert dlv[i] == li - base


def test_delta_losses_central():
    model = synth_dense(dims=5, classes=3, hidden=4)
    params = init_params(model, SeededRng(11))
    mask = Mask.ones(params.segments)
    x = SeededRng(12).gaussian(2 * 5).reshape(2, 5)
    y = np.array([0, 1])
    p = pspec(seed=14, k=2)
    dlv = delta_losses(model.spec, params, mask, x, y, p, central=True)
    for i in range(2):
        d = p.delta(i, params.n, mask.bits)
        up = cross_entropy_loss(
            model_forward(model.spec, params.with_flat(params.flat + d), mask, x), y)
        dn = cross_entropy_loss(
            model_forward(model.spec, params.with_flat(params.flat - d), mask, x), y)
        assert dlv[i] == pytest.approx((up - dn) / 2, rel=1e-12)


def test_delta_losses_nonfinite_reports_sample():
    model = synth_dense(dims=3, classes=2, hidden=2)
    params = init_params(model, SeededRng(15))
    huge = params.with_flat(np.full(params.n, 1e200))
    mask = Mask.ones(params.segments)
    x = np.full((1, 3), 1e200)
    with pytest.raises(NonFiniteError):
        delta_losses(model.spec, huge, mask, x, np.array([0]), pspec(k=2))


def test_covariance_deviation_identity_limit():
    # tiny case checked against a dense eigendecomposition
    p = pspec(seed=16, sigma=0.5, k=6)
    n = 4
    d = np.stack([p.delta(i, n) for i in range(6)]) / p.sigma
    cov = d.T @ d / 6
    expected = np.linalg.norm(cov - np.eye(n), 2)
    assert covariance_deviation(p, n) == pytest.approx(expected, rel=1e-6)


def test_covariance_deviation_shrinks_with_k():
    n = 30
    devs = [covariance_deviation(pspec(seed=17, k=k), n)
            for k in (100, 1000, 10000)]
    assert devs[0] > devs[1] > devs[2]


def test_covariance_deviation_sqrt_bound():
    n = 25
    for k in (500, 5000):
        dev = covariance_deviation(pspec(seed=18, k=k), n)
        assert dev <= 5 * np.sqrt(n / k)


def test_fd_directional_quadratic_exact_with_central_symmetry():
    n = 7
    gen = SeededRng(19).generator()
    a = gen.standard_normal((n, n))
    a = a @ a.T
    w = gen.standard_normal(n)
    d = gen.standard_normal(n)

    def loss(v):
        return 0.5 * v @ a @ v

    step = 1e-6
    fd = fd_directional(loss, w, d, step)
    # exact second-order expansion of the quadratic
    expected = step * (d @ a @ w) + 0.5 * step ** 2 * (d @ a @ d)
    assert fd == pytest.approx(expected, rel=1e-6)


def test_fd_directional_zero_step_rejected():
    with pytest.raises(ValueError):
        fd_directional(lambda v: 0.0, np.zeros(3), np.ones(3), 0.0)


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        PerturbationSpec(SeededRng(0), 0.0, 4)
