import math

import numpy as np
import pytest

from fetaprune import kernels
from fetaprune.linalg import ParameterError, make_rng, relu, softplus
from fetaprune.net import LayerTap, capture
from fetaprune.pruner import (
    FetaConfig,
    SolverDiverged,
    ThresholdSpec,
    acc_prox_svrg,
    dc_parts,
    feta,
    grad_g_minibatch,
    grad_h,
    hard_threshold,
    prox_l1,
    sparsity_of,
)


def instance(d_in=4, d_out=3, m=50, seed=0, realizable=False):
    rng = make_rng(seed)
    A = rng.standard_normal((d_in, m))
    W = rng.standard_normal((d_in, d_out))
    B = relu(W.T @ A) if realizable else np.maximum(rng.standard_normal((d_out, m)), 0)
    return W, A, B


def smoothed_loss(U, A, B, theta):
    total = 0.0
    for j in range(A.shape[1]):
        r = softplus((U.T @ A[:, j])[:, None], theta)[:, 0] - B[:, j]
        total += float(r @ r)
    return total


def fd_grad(f, U, h=1e-6):
    G = np.zeros_like(U)
    for idx in np.ndindex(U.shape):
        E = np.zeros_like(U)
        E[idx] = h
        G[idx] = (f(U + E) - f(U - E)) / (2 * h)
    return G


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


# --- hard thresholding --------------------------------------------------------

def test_hard_threshold_examples():
    W = np.array([[0.5, -0.1], [0.02, 2.0]])
    assert np.array_equal(hard_threshold(W, ThresholdSpec("absolute", 0.3)), [[0.5, 0], [0, 2.0]])
    Wz = np.array([[0.0, -1e-300], [3.0, 0.0]])
    assert np.array_equal(hard_threshold(Wz, ThresholdSpec("absolute", 0.0)), Wz)
    R = make_rng(1).standard_normal((10, 10))
    out = hard_threshold(R, ThresholdSpec("sparsity", 0.9))
    assert np.count_nonzero(out == 0) == 90
    kept = np.sort(np.abs(R), axis=None)[-10:]
    assert np.array_equal(np.sort(np.abs(out[out != 0])), kept)


def test_threshold_ties_are_zeroed():
    W = np.array([[1.0, 1.0, 1.0, 2.0]])
    assert sparsity_of(hard_threshold(W, ThresholdSpec("sparsity", 0.5))) == 0.75
    assert np.array_equal(hard_threshold(W, ThresholdSpec("sparsity", 0.0)), W)


@pytest.mark.parametrize("mode, value", [("absolute", -1.0), ("sparsity", 1.0), ("quantile", 0.5)])
def test_bad_threshold_spec(mode, value):
    with pytest.raises(ParameterError):
        ThresholdSpec(mode, value)


# --- DC pieces -------------------------------------------------------------------

def test_dc_parts_examples():
    g, h = dc_parts([[1.0]], [[1.0]], [[1.0]], 100.0)
    assert (g, h) == (2.0, 2.0)
    W, A, B = instance()
    assert dc_parts(W, A, np.zeros_like(B), 20.0)[1] == 0.0


@pytest.mark.parametrize("theta", [1.0, 20.0])
def test_dc_identity(theta):
    rng = make_rng(2)
    for _ in range(20):
        W, A, B = instance(seed=int(rng.integers(1 << 30)))
        g, h = dc_parts(W, A, B, theta)
        ref = smoothed_loss(W, A, B, theta)
        assert abs((g - h) - ref) <= 1e-9 * max(ref, 1.0)


def test_negative_outputs_rejected():
    W, A, B = instance()
    B[0, 0] = -1e-3
    for fn in (dc_parts, grad_h):
        with pytest.raises(ParameterError):
            fn(W, A, B, 20.0)


def test_grad_h_examples_and_finite_difference():
    assert np.array_equal(grad_h([[0.0]], [[1.0]], [[1.0]], 1.0), [[1.0]])
    W, A, B = instance()
    assert not np.any(grad_h(W, A, np.zeros_like(B), 20.0))
    for theta in (1.0, 5.0):
        fd = fd_grad(lambda U: dc_parts(U, A, B, theta)[1], W)
        assert rel_err(grad_h(W, A, B, theta), fd) <= 1e-5


def test_grad_g_minibatch():
    W, A, B = instance(m=40)
    C = make_rng(3).standard_normal(W.shape)
    theta = 5.0
    fd = fd_grad(lambda U: dc_parts(U, A, B, theta)[0] - float(np.sum(U * C)), W)
    assert rel_err(grad_g_minibatch(W, A, B, theta, C, 40), fd) <= 1e-5

    # at U = 0 with large theta only -C survives
    G0 = grad_g_minibatch(np.zeros_like(W), A, B, 1e6, C, 40)
    assert np.max(np.abs(G0 + C)) <= 1e-4

    # two halves, each rescaled to the full count, average to the full gradient
    full = grad_g_minibatch(W, A, B, theta, C, 40)
    h1 = grad_g_minibatch(W, A[:, :20], B[:, :20], theta, C, 40)
    h2 = grad_g_minibatch(W, A[:, 20:], B[:, 20:], theta, C, 40)
    assert np.allclose(0.5 * (h1 + h2), full, rtol=1e-13, atol=1e-12)

    with pytest.raises(ParameterError):
        grad_g_minibatch(W, A[:, :0], B[:, :0], theta, C, 40)


def test_convexity_witnesses():
    rng = make_rng(4)
    _, A, B = instance(m=30)
    for _ in range(200):
        U1, U2 = rng.standard_normal((2, 4, 3)) * 2
        a = rng.uniform()
        mid = dc_parts(a * U1 + (1 - a) * U2, A, B, 20.0)
        p1, p2 = dc_parts(U1, A, B, 20.0), dc_parts(U2, A, B, 20.0)
        for part in (0, 1):
            assert mid[part] <= a * p1[part] + (1 - a) * p2[part] + 1e-9


# --- prox -----------------------------------------------------------------------

def test_prox_examples():
    assert prox_l1([[0.5]], 0.2)[0, 0] == pytest.approx(0.3, abs=1e-15)
    assert prox_l1([[-0.1]], 0.2)[0, 0] == 0.0
    V = make_rng(5).standard_normal((3, 3))
    assert np.array_equal(prox_l1(V, 0.0), V)
    with pytest.raises(ParameterError):
        prox_l1(V, -1.0)


def test_prox_is_the_minimizer():
    rng = make_rng(6)
    for _ in range(100):
        v, tau = rng.normal(0, 2), rng.uniform(0, 2)
        p = prox_l1([[v]], tau)[0, 0]
        z = rng.normal(v, 2, size=1000)
        assert tau * abs(p) + 0.5 * (p - v) ** 2 <= np.min(tau * np.abs(z) + 0.5 * (z - v) ** 2)


# --- acc-prox-svrg ------------------------------------------------------------------

def convex_model(U, A, B, C, theta, lam):
    g, _ = dc_parts(U, A, B, theta)
    return (g - float(np.sum(U * C))) / A.shape[1] + lam * float(np.sum(np.abs(U)))


def prox_gd_oracle(U, A, C, theta, lam, eta, steps):
    m = A.shape[1]
    x = np.array(U)
    for _ in range(steps):
        grad = (A @ kernels.sq_grad_factor(x.T @ A, theta).T - C) / m
        v = x - eta * grad
        x = np.sign(v) * np.maximum(np.abs(v) - eta * lam, 0.0)
    return x


def test_full_batch_without_momentum_is_prox_gradient_bitwise():
    W, A, B = instance(m=60, realizable=True)
    U0 = W + 0.3 * make_rng(7).standard_normal(W.shape)
    C = grad_h(U0, A, B, 20.0)
    cfg = FetaConfig(lam=0.01, beta=0.0, batch=60, S=4, T=5, eta=0.05)
    out = acc_prox_svrg(U0, A, B, C, cfg)
    assert np.array_equal(out, prox_gd_oracle(U0, A, C, 20.0, 0.01, 0.05, 20))


def test_svrg_matches_long_run_oracle():
    W, A, B = instance(m=60, realizable=True)
    U0 = W + 0.3 * make_rng(8).standard_normal(W.shape)
    C = grad_h(U0, A, B, 20.0)
    cfg = FetaConfig(lam=0.0, batch=10, S=60, eta=0.02, beta=0.5)
    out = acc_prox_svrg(U0, A, B, C, cfg)
    ref = prox_gd_oracle(U0, A, C, 20.0, 0.0, 0.05, 20000)
    assert abs(convex_model(out, A, B, C, 20.0, 0) - convex_model(ref, A, B, C, 20.0, 0)) <= 1e-4


def test_large_lambda_gives_zero():
    W, A, B = instance(m=60)
    C = grad_h(W, A, B, 20.0)
    G0 = grad_g_minibatch(np.zeros_like(W), A, B, 20.0, C, 60) / 60
    crit = float(np.max(np.abs(G0)))
    cfg = FetaConfig(lam=1.5 * crit, batch=60, S=1000, eta=0.05, beta=0.0)
    assert np.max(np.abs(acc_prox_svrg(W, A, B, C, cfg))) <= 1e-8
    below = acc_prox_svrg(W, A, B, C, cfg.replace(lam=0.5 * crit))
    assert np.max(np.abs(below)) > 1e-3


def test_huge_step_diverges():
    W, A, B = instance(m=60)
    C = grad_h(W, A, B, 20.0)
    with np.errstate(all="ignore"), pytest.raises(SolverDiverged):
        acc_prox_svrg(W, A, B, C, FetaConfig(eta=1e40, S=20))


# --- feta ----------------------------------------------------------------------------

def test_bad_feta_config():
    for kw in (dict(K=0), dict(lam=-1), dict(theta=0), dict(beta=1.0), dict(eta=0),
               dict(target_sparsity=1.0)):
        with pytest.raises(ParameterError):
            FetaConfig(**kw)


@pytest.fixture(scope="module")
def tap1(small_fixture):
    net = small_fixture.net
    return net, capture(net, small_fixture.train.X, 1)


def layer_error(net, tap, U, b):
    return float(np.linalg.norm(relu(U.T @ tap.A + b[:, None]) - tap.B))


def test_lambda_zero_stays_put(tap1):
    net, tap = tap1
    L = net.layers[1]
    res = feta(L.weights, tap, FetaConfig(lam=0.0, theta=1e5), bias=L.bias)
    assert res.layer_error <= 1e-6
    assert np.max(np.abs(res.U - L.weights)) <= 1e-6

    # the softplus surrogate moves the optimum by O(1/theta) only
    res = feta(L.weights, tap, FetaConfig(lam=0.0, theta=20.0), bias=L.bias)
    assert res.layer_error <= 0.5 and np.max(np.abs(res.U - L.weights)) <= 1e-2


def test_feta_traces_descend(tap1):
    net, tap = tap1
    L = net.layers[1]
    res = feta(L.weights, tap, FetaConfig(lam=0.5, K=10), bias=L.bias)
    for trace in (res.objective_trace, res.smoothed_trace):
        assert 2 <= len(trace) <= res.n_outer + 1
        slack = 1e-6 * abs(trace[0])
        assert all(b <= a + slack for a, b in zip(trace, trace[1:]))


def test_feta_target_sparsity(tap1):
    net, tap = tap1
    L = net.layers[1]
    res = feta(L.weights, tap, FetaConfig(target_sparsity=0.9), bias=L.bias)
    assert abs(res.sparsity - 0.9) <= 0.02
    assert res.sparsity == sparsity_of(res.U)  # snapped: zeros are exact
    assert res.bias is not None and res.bias.shape == L.bias.shape
    assert res.layer_error == pytest.approx(layer_error(net, tap, res.U, res.bias), rel=1e-12)
    U_thr = hard_threshold(L.weights, ThresholdSpec("sparsity", res.sparsity))
    assert res.layer_error < layer_error(net, tap, U_thr, L.bias)
    assert res.tuning and res.wall_time > 0


def test_feta_is_deterministic(tap1):
    net, tap = tap1
    L = net.layers[1]
    cfg = FetaConfig(lam=0.5, K=3, seed=11)
    a, b = feta(L.weights, tap, cfg, L.bias), feta(L.weights, tap, cfg, L.bias)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.bias, b.bias)
    assert a.objective_trace == b.objective_trace


def test_feta_without_bias():
    W, A, B = instance(d_in=6, d_out=4, m=300, realizable=True)
    tap = LayerTap(0, A, B)
    res = feta(W, tap, FetaConfig(lam=0.05, K=4, eta=0.01))
    assert res.bias is None and res.U.shape == W.shape
    assert res.objective_trace[-1] <= res.objective_trace[0]


def test_sparsity_accounting():
    U = np.array([[0.0, 1e-9], [2.0, -3.0]])
    assert sparsity_of(U) == 0.25
    assert sparsity_of(U, 1e-8) == 0.5
    assert math.isclose(sparsity_of(np.zeros((3, 3))), 1.0)
