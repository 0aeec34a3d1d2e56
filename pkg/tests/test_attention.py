import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ugf.attention import (
    AttentionConfig,
    UGAttention,
    attention_weights,
    confidence_gate,
    log_confidence_gate,
    ug_attention_forward,
    weights_from_scores,
)
from ugf.autodiff import Parameter, Tensor
from ugf import autodiff as ad
from ugf.errors import ConfigError, ContractError
from ugf.gradcheck import compare_gradients
from ugf.rng import RngStream

VARIANTS = ("additive_log", "multiplicative", "vanilla")


def _attn(variant="additive_log", alpha=1.0, d=4, seed=0, heads=1):
    return UGAttention(AttentionConfig(d, d, alpha, variant, heads), RngStream(seed))


def _inputs(n=6, d=4, seed=1, batch=()):
    rng = RngStream(seed)
    return rng.normal(batch + (n, d)), np.abs(rng.normal(batch + (n,)))


def _reference_attention(z, sigmas, Wq, Wk, Wv, alpha, variant):
    """Loop implementation over query/key pairs."""
    n = z.shape[0]
    q, k, v = z @ Wq, z @ Wk, z @ Wv
    d = Wq.shape[1]
    A = np.zeros((n, n))
    for i in range(n):
        row = np.empty(n)
        for j in range(n):
            s = float(q[i] @ k[j]) / math.sqrt(d)
            G = math.exp(-alpha * (sigmas[i] + sigmas[j]))
            row[j] = {"vanilla": s, "additive_log": s + math.log(G), "multiplicative": s * G}[variant]
        e = np.exp(row - row.max())
        A[i] = e / e.sum()
    return A, A @ v


def test_confidence_gate_examples():
    s = np.abs(np.random.default_rng(0).normal(size=5))
    assert np.all(confidence_gate(s, s, 0.0).data == 1.0)
    assert np.all(confidence_gate(np.zeros(3), np.zeros(3), 2.0).data == 1.0)
    half = math.log(2) / 2
    assert confidence_gate([half], [half], 1.0).data[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_confidence_gate_rejects_negative_sigma():
    with pytest.raises(ContractError):
        log_confidence_gate([0.1, -0.2], [0.1, 0.2], 1.0)


@pytest.mark.parametrize("variant", VARIANTS)
def test_matches_loop_reference(variant):
    attn = _attn(variant, alpha=0.7)
    z, s = _inputs()
    A, out = _reference_attention(z, s, attn.W_q[0].data, attn.W_k[0].data, attn.W_v[0].data, 0.7, variant)
    np.testing.assert_allclose(attention_weights(z, s, attn).data, A, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ug_attention_forward(z, s, attn).data, out, rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100.0))
def test_rows_are_stochastic(variant, seed, scale):
    attn = _attn(variant, alpha=1.3, seed=seed % 7)
    z, s = _inputs(n=5, seed=seed, batch=(3,))
    A = attention_weights(z * scale, s * scale, attn).data
    assert np.all(A >= 0)
    assert np.max(np.abs(A.sum(axis=-1) - 1)) < 1e-12


def test_alpha_zero_additive_equals_vanilla():
    z, s = _inputs(batch=(2,))
    a_add, a_van = _attn("additive_log", 0.0), _attn("vanilla", 0.0)
    np.testing.assert_allclose(attention_weights(z, s, a_add).data, attention_weights(z, s, a_van).data, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a_add(z, s).data, a_van(z, s).data, rtol=0, atol=1e-12)


def test_multiplicative_with_unit_gate_equals_vanilla():
    z, s = _inputs()
    np.testing.assert_allclose(attention_weights(z, s, _attn("multiplicative", 0.0)).data,
                               attention_weights(z, s, _attn("vanilla")).data, rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_single_position(variant):
    attn = _attn(variant)
    z, s = _inputs(n=1)
    assert attention_weights(z, s, attn).data.tolist() == [[1.0]]
    np.testing.assert_allclose(attn(z, s).data, z @ attn.W_v[0].data, rtol=0, atol=1e-15)


def test_uniform_gates_and_equal_keys_give_uniform_rows():
    attn = _attn("additive_log")
    z = np.tile(np.array([0.3, -1.0, 2.0, 0.5]), (5, 1))
    A = attention_weights(z, np.full(5, 0.4), attn).data
    np.testing.assert_allclose(A, np.full((5, 5), 0.2), rtol=0, atol=1e-15)


def test_forward_is_weights_times_values():
    attn = _attn("multiplicative")
    z, s = _inputs()
    A = attention_weights(z, s, attn).data
    np.testing.assert_allclose(attn(z, s).data, A @ (z @ attn.W_v[0].data), rtol=0, atol=1e-12)


def test_huge_sigma_key_is_ignored():
    attn = _attn("additive_log")
    z, s = _inputs()
    s[2] = 1e6
    A = attention_weights(z, s, attn).data
    assert np.all(A[:, 2] < 1e-12)
    assert np.all(np.isfinite(A))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), j=st.integers(0, 5), bump=st.floats(1e-6, 50.0))
def test_monotone_suppression(seed, j, bump):
    attn = _attn("additive_log", seed=seed % 5)
    z, s = _inputs(seed=seed)
    A0 = attention_weights(z, s, attn).data
    s2 = s.copy()
    s2[j] += bump
    A1 = attention_weights(z, s2, attn).data
    assert np.all(A1[:, j] <= A0[:, j])


@pytest.mark.parametrize("variant", VARIANTS)
def test_permutation_equivariance(variant):
    attn = _attn(variant)
    z, s = _inputs(n=7)
    perm = np.random.default_rng(3).permutation(7)
    out = attn(z, s).data
    np.testing.assert_allclose(attn(z[perm], s[perm]).data, out[perm], rtol=0, atol=1e-12)


def test_missing_sigmas_is_config_error():
    z, _ = _inputs()
    with pytest.raises(ConfigError):
        _attn("additive_log")(z, None)
    _attn("vanilla")(z, None)


def test_config_validation():
    with pytest.raises(ConfigError):
        AttentionConfig(variant="cosine")
    with pytest.raises(ConfigError):
        AttentionConfig(alpha=-1.0)


def test_multi_head_shares_gate_and_concatenates():
    attn = _attn("additive_log", heads=3)
    z, s = _inputs()
    out = attn(z, s)
    assert out.shape == (6, 12) and attn.d_out == 12
    for h, A in enumerate(attn.head_weights(z, s)):
        ref, _ = _reference_attention(z, s, attn.W_q[h].data, attn.W_k[h].data, attn.W_v[h].data, 1.0, "additive_log")
        np.testing.assert_allclose(A.data, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant", ("additive_log", "multiplicative"))
def test_gradients_through_projections_sigmas_and_alpha(variant):
    attn = _attn(variant)
    z, s = _inputs(n=5)
    sig = Parameter(s + 0.1, "sig")
    alpha = Parameter(0.8, "alpha")
    target = RngStream(4).normal((5, 4))
    loss = lambda: ad.tsum((attn(z, sig, alpha) - Tensor(target)) ** 2)
    params = attn.parameters() + [sig, alpha]
    errs = compare_gradients(loss, params)
    assert max(errs.values()) < 1e-4, errs
