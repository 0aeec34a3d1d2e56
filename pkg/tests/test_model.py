import json
import math

import numpy as np
import pytest

from ugf import autodiff as ad
from ugf.attention import AttentionConfig
from ugf.errors import ConfigError, ContractError
from ugf.model import (
    ModelConfig,
    PredictiveOutput,
    UGGenerator,
    load_checkpoint,
    point_forecast,
    sample_predictive,
    save_checkpoint,
)
from ugf.rng import RngStream
from ugf.selfcheck import tiny_model_config


def _softplus(x):
    return np.logaddexp(0.0, x)


def _x(cfg, n=3, seed=1):
    return RngStream(seed).normal((n, cfg.L, cfg.D))


def reference_baseline(model: UGGenerator, x: np.ndarray, eps: np.ndarray):
    """Plain numpy ungated model: z = mu + sigma * eps, vanilla attention, mean pool, Gaussian head."""
    c = model.cfg
    p = model.state_dict()
    h = x
    for i, k in enumerate(c.kernel_sizes):
        W, b = p[f"enc.conv{i}.W"], p[f"enc.conv{i}.b"]
        out = np.zeros(h.shape[:2] + (W.shape[2],))
        for t in range(c.L):
            for j in range(k):
                src = t - (k - 1) + j
                if src >= 0:
                    out[:, t] += h[:, src] @ W[j]
        h = _softplus(out + b)
    mu = h @ p["enc.mu.W"] + p["enc.mu.b"]
    log_var = np.clip(h @ p["enc.log_var.W"] + p["enc.log_var.b"], -10, 10)
    z = mu + np.exp(0.5 * log_var) * eps
    q, kk, v = z @ p["attn.h0.W_q"], z @ p["attn.h0.W_k"], z @ p["attn.h0.W_v"]
    s = q @ np.swapaxes(kk, 1, 2) / math.sqrt(c.attention.d_head)
    a = np.exp(s - s.max(axis=-1, keepdims=True))
    a /= a.sum(axis=-1, keepdims=True)
    pooled = (a @ v).mean(axis=1)
    hid = _softplus(pooled @ p["dec.hidden.W"] + p["dec.hidden.b"])
    mu_y = (hid @ p["dec.mu.W"] + p["dec.mu.b"]).reshape(len(x), c.H, c.D)
    lv = np.clip(hid @ p["dec.log_var.W"] + p["dec.log_var.b"], -10, 10)
    return mu, mu_y, np.exp(0.5 * lv).reshape(len(x), c.H, c.D)


def test_tiny_config_shape_contract():
    cfg = tiny_model_config()
    m = UGGenerator(cfg)
    res = m.forward(_x(cfg), RngStream(0))
    assert res.output.mu_y.shape == (3, cfg.H, cfg.D)
    assert res.output.sigma_y.shape == (3, cfg.H, cfg.D)
    assert res.encoded.mu.shape == (3, cfg.L, cfg.d_z)
    assert res.encoded.log_var.shape == (3, cfg.L, cfg.d_z)
    assert res.gate.gate.shape == (3, cfg.L, cfg.d_z)
    assert res.output.gate_out.shape == (3,)
    assert np.all((res.gate.gate.data > 0) & (res.gate.gate.data < 1))


def test_encode_zero_weights():
    cfg = tiny_model_config()
    m = UGGenerator(cfg)
    for name, p in m.named_parameters().items():
        if name.startswith("enc."):
            p.data = np.zeros_like(p.data)
    enc = m.encode(_x(cfg) * 100)
    assert np.all(enc.mu.data == 0) and np.all(enc.log_var.data == 0) and np.all(enc.sigma.data == 1)


def test_encode_deterministic_and_causal():
    cfg = tiny_model_config()
    m = UGGenerator(cfg)
    x = _x(cfg)
    a, b = m.encode(x), m.encode(x.copy())
    assert np.array_equal(a.mu.data, b.mu.data) and np.array_equal(a.sigma.data, b.sigma.data)
    x2 = x.copy()
    x2[:, -1] += 5.0  # the last step must not change earlier positions
    c = m.encode(x2)
    assert np.array_equal(a.mu.data[:, :-1], c.mu.data[:, :-1])


def test_input_contract():
    cfg = tiny_model_config()
    m = UGGenerator(cfg)
    with pytest.raises(ContractError):
        m.encode(np.zeros((2, cfg.L + 1, cfg.D)))
    bad = _x(cfg)
    bad[0, 0, 0] = np.nan
    with pytest.raises(ContractError):
        m.encode(bad)


def test_closed_gates_make_forward_deterministic():
    cfg = tiny_model_config()
    m = UGGenerator(cfg)
    x = _x(cfg)
    r1 = m.predict(x, RngStream(1), S=50, gate_override=0.0, out_gate_override=0.0)
    r2 = m.predict(x, RngStream(2), S=50, gate_override=0.0, out_gate_override=0.0)
    assert np.array_equal(r1.output.mu_y.data, r2.output.mu_y.data)
    assert np.array_equal(r1.output.samples, r2.output.samples)
    assert np.all(r1.output.samples == r1.output.mu_y.data[None])


def test_closed_gates_equal_mu_path():
    cfg = tiny_model_config()
    m = UGGenerator(cfg)
    x = _x(cfg)
    res = m.forward(x, RngStream(3), gate_override=0.0, out_gate_override=0.0)
    # the deterministic point model feeds the encoder mean straight through
    _, mu_y, sigma_y = reference_baseline(m, x, np.zeros((3, cfg.L, cfg.d_z)))
    cfg_v = tiny_model_config(attention=AttentionConfig(cfg.d_z, cfg.d_z, 0.0, "additive_log"))
    mv = UGGenerator(cfg_v)
    mv.load_state_dict(m.state_dict())
    resv = mv.forward(x, RngStream(3), gate_override=0.0, out_gate_override=0.0)
    np.testing.assert_allclose(resv.output.mu_y.data, mu_y, rtol=0, atol=1e-12)
    assert np.array_equal(res.attended.data, m.attn(res.encoded.mu, ad.tmean(res.encoded.sigma, axis=-1)).data)


def test_open_gate_alpha_zero_equals_ungated_baseline():
    cfg = tiny_model_config(attention=AttentionConfig(4, 4, 0.0, "additive_log"))
    m = UGGenerator(cfg)
    x = _x(cfg)
    res = m.forward(x, RngStream(4), gate_override=1.0, out_gate_override=1.0)
    eps = RngStream(4).normal((3, cfg.L, cfg.d_z))
    mu, mu_y, sigma_y = reference_baseline(m, x, eps)
    np.testing.assert_allclose(res.encoded.mu.data, mu, rtol=0, atol=1e-12)
    np.testing.assert_allclose(res.output.mu_y.data, mu_y, rtol=0, atol=1e-12)
    np.testing.assert_allclose(res.output.sigma_y.data, sigma_y, rtol=0, atol=1e-12)
    s = sample_predictive(res.output, res.output.gate_out, RngStream(5), 4).data
    eps2 = RngStream(5).normal((4, 3, cfg.H, cfg.D))
    np.testing.assert_allclose(s, mu_y + sigma_y * eps2, rtol=0, atol=1e-12)


def test_sigma_y_clamped():
    cfg = tiny_model_config()
    m = UGGenerator(cfg)
    for val in (-1e3, 1e3):
        m.dec_log_var.b.data[:] = val
        s = m.forward(_x(cfg) * 50, RngStream(0)).output.sigma_y.data
        assert np.all(s >= math.exp(-5)) and np.all(s <= math.exp(5))


def test_sampling_consistency():
    rng = RngStream(6)
    mu = ad.Tensor(rng.normal((2, 3, 1)))
    sigma = ad.Tensor(np.abs(rng.normal((2, 3, 1))) + 0.5)
    g = np.array([1.0, 0.3])
    S = 100_000
    s = sample_predictive(PredictiveOutput(mu, sigma, ad.Tensor(g)), g, RngStream(7), S).data
    bound = 3 * g[:, None, None] * sigma.data / math.sqrt(S)
    assert np.all(np.abs(s.mean(axis=0) - mu.data) <= bound)


def test_sampling_law_scalar():
    out = PredictiveOutput(ad.Tensor([[[0.0]]]), ad.Tensor([[[2.0]]]), ad.Tensor([1.0]))
    s = sample_predictive(out, np.array([1.0]), RngStream(8), 100_000).data
    assert abs(s.std() - 2.0) / 2.0 < 0.02
    s0 = sample_predictive(out, np.array([0.0]), RngStream(8), 10).data
    assert np.all(s0 == 0.0)


def test_sampling_contract():
    out = PredictiveOutput(ad.Tensor([[[0.0]]]), ad.Tensor([[[1.0]]]), ad.Tensor([1.0]))
    with pytest.raises(ContractError):
        sample_predictive(out, np.array([1.0]), RngStream(0), 0)
    with pytest.raises(ContractError):
        sample_predictive(out, np.array([1.5]), RngStream(0), 3)


def test_default_sample_count_is_500():
    cfg = tiny_model_config()
    res = UGGenerator(cfg).predict(_x(cfg), RngStream(0))
    assert res.output.samples.shape == (500, 3, cfg.H, cfg.D)


def test_point_forecast_examples():
    one = np.array([[2.5]])[None]
    m, med = point_forecast(one)
    assert m == med == 2.5
    m, med = point_forecast(np.array([1.0, 3.0]))
    assert m == 2.0 and med == 2.0
    m, med = point_forecast(np.array([1.0, 2.0, 10.0]))
    assert m == pytest.approx(13 / 3, abs=1e-15) and med == 2.0


def test_forward_deterministic_under_seed():
    cfg = tiny_model_config()
    m = UGGenerator(cfg)
    a = m.forward(_x(cfg), RngStream(9))
    b = m.forward(_x(cfg), RngStream(9))
    assert np.array_equal(a.output.mu_y.data, b.output.mu_y.data)
    assert np.array_equal(a.gate.gate.data, b.gate.gate.data)


def test_untied_output_gate():
    cfg = tiny_model_config(tie_output_gate=False)
    m = UGGenerator(cfg)
    assert "dec.out_gate.W" in m.named_parameters()
    g = m.forward(_x(cfg), RngStream(0)).output.gate_out.data
    assert np.all((g > 0) & (g < 1))


def test_gate_hidden_and_softplus_scale():
    cfg = tiny_model_config(gate_hidden=6, gate_d_u=3, latent_scale="softplus")
    m = UGGenerator(cfg)
    res = m.forward(_x(cfg), RngStream(0))
    assert res.gate.u.shape == (3, cfg.L, 3)
    assert np.all(res.encoded.sigma.data >= 1e-6)


def test_decision_var_and_lambda():
    cfg = tiny_model_config()
    res = UGGenerator(cfg).forward(_x(cfg), RngStream(0), lambda0=2.0)
    g = res.gate.gate.data.reshape(3, -1)
    np.testing.assert_allclose(res.gate.decision_var, g.var(axis=1), rtol=0, atol=1e-15)
    np.testing.assert_allclose(res.gate.lambda_t, 2.0 * (1 - g.mean(axis=1)), rtol=0, atol=1e-15)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(L=0)
    with pytest.raises(ConfigError):
        ModelConfig(kernel_sizes=(9,), L=8)
    with pytest.raises(ConfigError):
        ModelConfig(d_z=3)
    with pytest.raises(ConfigError):
        ModelConfig(force_gate=1.5)


def test_checkpoint_round_trip(tmp_path):
    cfg = tiny_model_config(kernel_sizes=(3, 2), seed=4)
    m = UGGenerator(cfg)
    save_checkpoint(tmp_path / "c.npz", m, {"epoch": 7})
    m2, extra = load_checkpoint(tmp_path / "c.npz")
    assert extra == {"epoch": 7}
    assert m2.cfg.to_dict() == cfg.to_dict()
    for k, v in m.state_dict().items():
        assert np.array_equal(v, m2.state_dict()[k])
    x = _x(cfg)
    assert np.array_equal(m.forward(x, RngStream(1)).output.mu_y.data, m2.forward(x, RngStream(1)).output.mu_y.data)


def test_checkpoint_version_mismatch(tmp_path):
    m = UGGenerator(tiny_model_config())
    path = tmp_path / "c.npz"
    save_checkpoint(path, m)
    with np.load(path) as npz:
        arrays = {k: npz[k] for k in npz.files}
    meta = json.loads(bytes(arrays["__meta__"]).decode())
    meta["format_version"] = 99
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)
    with pytest.raises(ContractError, match="version"):
        load_checkpoint(path)


def test_load_state_dict_mismatch():
    m = UGGenerator(tiny_model_config())
    state = m.state_dict()
    state.pop("gate.b_g")
    with pytest.raises(ContractError):
        m.load_state_dict(state)


def test_parameter_ids_unique():
    m = UGGenerator(tiny_model_config(attention=AttentionConfig(4, 4, 1.0, "additive_log", 2), tie_output_gate=False))
    names = [p.name for p in m.parameters()]
    assert len(names) == len(set(names))
