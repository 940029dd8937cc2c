import math

import numpy as np
import pytest
from gradcheck import check_gradients, random_config
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from lvqlab.basis import (
    AdamState,
    BasisParams,
    TrainingBatch,
    backward,
    cayley_orthogonal,
    forward_train,
    loss_and_grad,
    materialize,
    n_skew,
    optimizer_step,
    skew_matrix,
)
from lvqlab.entropy import EntropyParams
from lvqlab.lattice import cell_volume
from lvqlab.sources import ar1_covariance


def _zero_noise_batch(X):
    return TrainingBatch(X, np.zeros_like(X))


# -- Cayley map -------------------------------------------------------------------------------


def test_cayley_zero_is_identity():
    np.testing.assert_array_equal(cayley_orthogonal(np.zeros(6)), np.eye(4))


def test_cayley_quarter_turn():
    np.testing.assert_allclose(cayley_orthogonal([1.0]), [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)


def test_skew_matrix_layout():
    S = skew_matrix([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(S, [[0, 1, 2], [-1, 0, 3], [-2, -3, 0]])


def test_cayley_orthogonal_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        Q = cayley_orthogonal(rng.normal(0, 2, n_skew(n)))
        assert np.max(np.abs(Q.T @ Q - np.eye(n))) <= 1e-10
        assert np.linalg.det(Q) == pytest.approx(1.0, abs=1e-9)


def test_cayley_bad_length():
    with pytest.raises(ValueError):
        cayley_orthogonal(np.zeros(4))


# -- materialize ------------------------------------------------------------------------------


def test_materialize_zero_is_identity():
    b = materialize(BasisParams.identity(5))
    np.testing.assert_array_equal(b.matrix, np.eye(5))
    np.testing.assert_array_equal(b.inverse, np.eye(5))


def test_materialize_pure_scaling():
    b = materialize(BasisParams(np.zeros(1), np.zeros(1), np.array([math.log(2.0), 0.0])))
    np.testing.assert_allclose(b.matrix, np.diag([2.0, 1.0]), atol=1e-15)


def test_materialize_rotated_hypercube():
    rng = np.random.default_rng(1)
    k = n_skew(4)
    b = materialize(BasisParams(rng.normal(size=k), rng.normal(size=k), np.zeros(4)))
    np.testing.assert_allclose(b.matrix.T @ b.matrix, np.eye(4), atol=1e-12)
    assert cell_volume(b) == pytest.approx(1.0, rel=1e-12)


def test_materialize_inverse_and_volume():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(2, 9))
        k = n_skew(n)
        theta = rng.normal(0, 0.7, n)
        b = materialize(BasisParams(rng.normal(size=k), rng.normal(size=k), theta))
        assert np.max(np.abs(b.matrix @ b.inverse - np.eye(n))) <= 1e-10
        assert cell_volume(b) == pytest.approx(np.prod(np.exp(theta)), rel=1e-9)


# -- forward ------------------------------------------------------------------------------------


def test_forward_identity_noise_variance():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((20000, 4))
    X -= X.mean(axis=0)
    batch = TrainingBatch.uniform(X, rng)
    out = forward_train(BasisParams.identity(4), EntropyParams.default(4), batch, 1.0)
    assert out.mse == pytest.approx(1 / 12, rel=0.02)


def test_forward_zero_noise_roundtrip():
    rng = np.random.default_rng(4)
    for n in (2, 5, 8):
        params, entropy, b, step_scale, _ = random_config(rng, n)
        out = forward_train(params, entropy, _zero_noise_batch(b.vectors), step_scale)
        np.testing.assert_allclose(out.reconstructions, b.vectors, atol=1e-12)
        assert out.mse < 1e-24


def test_forward_rate_matches_cdf_oracle():
    # Rate of a single coordinate against an independent normal-CDF evaluation.
    X = np.array([[0.3, -1.1]])
    entropy = EntropyParams([0.7, 1.9], [0.0, 0.0], 0.5)
    out = forward_train(BasisParams.identity(2), entropy, _zero_noise_batch(X), 1.0)
    x = X[0] / 0.5
    s = entropy.sigma / 0.5
    bits = -np.sum(np.log2(norm.cdf((x + 0.5) / s) - norm.cdf((x - 0.5) / s)))
    assert out.rate_bits[0] == pytest.approx(bits, rel=1e-12)


def test_forward_rate_grows_with_scale():
    X = np.zeros((1, 1))
    bits = [
        forward_train(BasisParams.identity(1), EntropyParams([s], [0.0], 1.0), _zero_noise_batch(X)).rate_bits[0]
        for s in np.geomspace(1, 1e4, 20)
    ]
    assert np.all(np.diff(bits) > 0)
    # Large-scale asymptote: log2(s * sqrt(2 pi)).
    assert bits[-1] == pytest.approx(math.log2(1e4 * math.sqrt(2 * math.pi)), abs=1e-6)


def test_batch_rejects_out_of_range_noise():
    with pytest.raises(ValueError):
        TrainingBatch(np.zeros((2, 2)), np.full((2, 2), 0.5))


# -- gradients --------------------------------------------------------------------------------


def test_gradients_identity_zero_lambda():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((16, 3))
    X = np.vstack([X, -X])
    batch = TrainingBatch.uniform(X, rng)
    worst, _ = check_gradients(BasisParams.identity(3), EntropyParams.default(3), batch, 1.0, 0.0)
    assert worst <= 1.0


@pytest.mark.parametrize("n", [2, 4, 8])
def test_gradients_random(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(3):
        worst, _ = check_gradients(*random_config(rng, n))
        assert worst <= 1.0


def test_gradients_duplicate_batch_invariance():
    rng = np.random.default_rng(6)
    params, entropy, b, s, lam = random_config(rng, 4)
    doubled = TrainingBatch(np.vstack([b.vectors, b.vectors]), np.vstack([b.noise, b.noise]))
    g1 = backward(params, entropy, b, s, lam)
    g2 = backward(params, entropy, doubled, s, lam)
    for name in vars(g1):
        np.testing.assert_allclose(getattr(g1, name), getattr(g2, name), rtol=1e-12, atol=1e-15)


# -- optimizer ------------------------------------------------------------------------------------


def test_adam_zero_gradient():
    state = AdamState(np.full(3, 0.5), np.full(3, 0.25), 4)
    p = np.array([1.0, -2.0, 3.0])
    new, st2 = optimizer_step(state, p, np.zeros(3), 0.1)
    np.testing.assert_array_equal(new, p - 0.1 * (0.45 / (1 - 0.9**5)) / (np.sqrt(0.24975 / (1 - 0.999**5)) + 1e-8))
    np.testing.assert_allclose(st2.m, 0.45)
    np.testing.assert_allclose(st2.v, 0.24975)
    # From a fresh state a zero gradient leaves the parameters unchanged.
    new, _ = optimizer_step(AdamState.zeros(3), p, np.zeros(3), 0.1)
    np.testing.assert_array_equal(new, p)


def test_adam_constant_gradient_step_size():
    g = np.array([3.0, -0.01, 1e3])
    p = np.zeros(3)
    state = AdamState.zeros(3)
    for _ in range(200):
        new, state = optimizer_step(state, p, g, 0.01)
        step = new - p
        p = new
    np.testing.assert_allclose(step, -0.01 * np.sign(g), rtol=1e-5)


def test_adam_deterministic():
    rng = np.random.default_rng(7)
    grads = rng.standard_normal((50, 4))
    runs = []
    for _ in range(2):
        p, state = np.zeros(4), AdamState.zeros(4)
        for g in grads:
            p, state = optimizer_step(state, p, g, 0.05)
        runs.append(p)
    np.testing.assert_array_equal(*runs)


# -- properties -------------------------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_usq_equivalence_zero_params(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 3, (64, 4))
    q_s = float(rng.uniform(0.1, 2.0))
    entropy = EntropyParams(np.ones(4), np.zeros(4), q_s)
    b = materialize(BasisParams.identity(4))
    hard = np.rint((X @ b.inverse.T) / q_s)
    np.testing.assert_array_equal(hard, np.rint(X / q_s))
    out = forward_train(BasisParams.identity(4), entropy, TrainingBatch(X, hard - X / q_s))
    np.testing.assert_array_equal(out.reconstructions, q_s * np.rint(X / q_s))


def test_training_decreases_smoothed_loss():
    rng = np.random.default_rng(8)
    n = 4
    L = np.linalg.cholesky(ar1_covariance(n, 0.9, 1.0))
    X = rng.standard_normal((256, n)) @ L.T
    batch = TrainingBatch.uniform(X, rng)
    k = n_skew(n)
    sizes = [k, k, n, n, n]
    theta = np.concatenate([np.zeros(2 * k + n), np.log(X.std(axis=0)), np.zeros(n)])
    state = AdamState.zeros(theta.size)
    losses = []
    for _ in range(500):
        su, sv, ls, lsig, mu = np.split(theta, np.cumsum(sizes)[:-1])
        entropy = EntropyParams(np.exp(lsig), mu, 0.3)
        loss, g, _ = loss_and_grad(BasisParams(su, sv, ls), entropy, batch, 1.0, 0.01)
        grad = np.concatenate([g.d_skew_u, g.d_skew_v, g.d_log_sigma, g.d_sigma * entropy.sigma, g.d_mu_g])
        theta, state = optimizer_step(state, theta, grad, 0.01)
        losses.append(loss)
    assert np.mean(losses[-50:]) < losses[0]
