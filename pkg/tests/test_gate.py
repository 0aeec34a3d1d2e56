import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ugf import autodiff as ad
from ugf.autodiff import Parameter, Tensor
from ugf.errors import ContractError
from ugf.gate import GateNetwork, adaptive_lambda, compute_gate, gated_reparameterize, uncertainty_features
from ugf.gradcheck import compare_gradients
from ugf.rng import RngStream


def test_features_identity_branch_concatenates():
    s = np.array([[0.5, 1.0], [2.0, 0.1]])
    m = np.array([[0.3], [0.0]])
    feats = uncertainty_features(s, m)
    net = GateNetwork(3, 2, RngStream(0))
    np.testing.assert_array_equal(net.features(feats).data, np.hstack([s, m]))


def test_features_zero_in_zero_out():
    feats = uncertainty_features(np.zeros((4, 2)), np.zeros((4, 1)))
    net = GateNetwork(3, 2, RngStream(0))
    assert np.all(net.features(feats).data == 0)


def test_features_hidden_layer_shape():
    rng = RngStream(1)
    feats = uncertainty_features(np.abs(rng.normal((5, 3))), np.abs(rng.normal((5, 1))))
    net = GateNetwork(4, 2, rng, hidden=8, d_u=6)
    u = net.features(feats)
    assert u.shape == (5, 6)
    assert net(u).shape == (5, 2)


def test_features_with_context():
    feats = uncertainty_features(np.ones((2, 1)), np.ones((2, 1)), context=np.full((2, 3), 7.0))
    assert feats.concat().shape == (2, 5)


def test_features_reject_negative_and_mismatch():
    with pytest.raises(ContractError):
        uncertainty_features(np.array([[-0.1]]), np.array([[0.1]]))
    with pytest.raises(ContractError):
        uncertainty_features(np.ones((3, 1)), np.ones((2, 1)))


def test_gate_examples():
    u = np.random.default_rng(0).normal(size=(6, 3))
    half = compute_gate(u, Tensor(np.zeros((3, 2))), Tensor(np.zeros(2))).data
    assert np.all(half == 0.5)
    closed = compute_gate(u, Tensor(np.zeros((3, 2))), Tensor(np.full(2, -20.0))).data
    assert np.all(closed < 1e-8) and np.all(closed > 0)


def test_gate_monotone_in_u():
    u = np.linspace(-5, 5, 101)[:, None]
    g = compute_gate(u, Tensor([[0.7]]), Tensor([0.1])).data[:, 0]
    assert np.all(np.diff(g) > 0)


@settings(max_examples=100)
@given(arrays(np.float64, (100, 3), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (3, 2), elements=st.floats(-10, 10)),
       arrays(np.float64, (2,), elements=st.floats(-10, 10)))
def test_gate_strictly_inside_unit_interval(u, W, b):
    g = compute_gate(u, Tensor(W), Tensor(b)).data
    assert np.all(g > 0) and np.all(g < 1)


def test_gate_zero_is_deterministic_mu():
    rng = RngStream(0)
    mu, sigma = rng.normal((4, 3)), np.abs(rng.normal((4, 3)))
    z1 = gated_reparameterize(mu, sigma, np.zeros((4, 3)), RngStream(1)).data
    z2 = gated_reparameterize(mu, sigma, np.zeros((4, 3)), RngStream(2)).data
    assert np.array_equal(z1, mu) and np.array_equal(z2, mu)


def test_gate_one_variance_matches_sigma():
    n = 100_000
    sigma = np.array([0.5, 1.0, 3.0])
    z = gated_reparameterize(np.zeros((n, 3)), sigma, np.ones((n, 1)), RngStream(5)).data
    np.testing.assert_allclose(z.var(axis=0), sigma ** 2, rtol=0.02)


def test_gate_half_sigma_two_gives_unit_std():
    n = 100_000
    z = gated_reparameterize(np.full(n, 1.0), np.full(n, 2.0), np.full(n, 0.5), RngStream(6)).data
    assert abs((z - 1.0).std() - 1.0) < 0.02


def test_variance_scaling_law():
    n = 100_000
    rng = RngStream(7)
    g = np.array([0.1, 0.4, 0.9, 1.0])
    sigma = np.array([2.0, 0.5, 1.5, 0.2])
    mu = rng.normal((4,))
    z = gated_reparameterize(np.broadcast_to(mu, (n, 4)), sigma, g, RngStream(8)).data
    ratio = (z - mu).var(axis=0) / (g * sigma) ** 2
    assert np.all(np.abs(ratio - 1) < 3 / math.sqrt(n))


def test_gradient_wrt_gate_is_sigma_eps():
    rng = RngStream(9)
    mu, sigma, eps = rng.normal((3, 2)), np.abs(rng.normal((3, 2))), rng.normal((3, 2))
    gate = Parameter(rng.uniform((3, 2)), "g")
    ad.backward(ad.tsum(gated_reparameterize(mu, sigma, gate, eps=eps)))
    np.testing.assert_allclose(gate.grad, sigma * eps, rtol=0, atol=1e-15)
    errs = compare_gradients(lambda: ad.tsum(gated_reparameterize(mu, sigma, gate, eps=eps) ** 2), [gate])
    assert errs["g"] < 1e-6


def test_reparameterize_rejects_negative_sigma():
    with pytest.raises(ContractError):
        gated_reparameterize(0.0, -1.0, 1.0, RngStream(0))


def test_adaptive_lambda_examples():
    assert adaptive_lambda(np.array([1.0]), 3.0)[0] == 0.0
    assert adaptive_lambda(np.array([0.0]), 3.0)[0] == 3.0
    assert adaptive_lambda(np.array([0.25]), 2.0)[0] == 1.5


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 100))
def test_adaptive_lambda_nonincreasing(g1, g2, lam0):
    lo, hi = sorted((g1, g2))
    a = adaptive_lambda(np.array([lo, hi]), lam0)
    assert a[0] >= a[1]


def test_adaptive_lambda_contract():
    with pytest.raises(ContractError):
        adaptive_lambda(np.array([1.2]), 1.0)
    with pytest.raises(ContractError):
        adaptive_lambda(np.array([0.5]), -1.0)
