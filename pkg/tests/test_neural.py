import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from optit.neural import (AdamW, MlpConfig, OptionNet, describe_checkpoint, finite_difference_gradients,
                          load_checkpoint, log_softmax, max_relative_error, save_checkpoint)


def test_mlp_config_rejects_nonpositive():
    with pytest.raises(ValueError):
        MlpConfig(10, 0, 5)
    with pytest.raises(ValueError):
        MlpConfig(10, 3, 0)


def test_zero_init_heads_are_uniform(rng):
    net = OptionNet(12, 4, 3, 2, 16, rng=0)
    obs = rng.integers(0, 2, (5, 12))
    logp, log_rho = net.forward_policy(obs)
    assert np.allclose(np.exp(logp), 0.25)
    assert np.allclose(np.exp(log_rho), 1 / 3)
    assert np.allclose(net.forward_value(obs), 0.0)


def test_single_option_rho_is_zero(rng):
    net = OptionNet(12, 4, 1, 2, 16, rng=0, zero_heads=False)
    _, log_rho = net.forward_policy(rng.integers(0, 2, 12))
    assert log_rho.shape == (1,) and log_rho[0] == 0.0


def test_option_jitter_breaks_symmetry_only_when_asked(rng):
    obs = rng.integers(0, 2, (3, 12))
    plain = OptionNet(12, 4, 3, 2, 16, rng=0)
    jittered = OptionNet(12, 4, 3, 2, 16, rng=0, option_init_scale=0.1)
    assert np.all(plain.params["option.w"] == 0)
    p = np.exp(jittered.forward_policy(obs)[0])
    assert not np.allclose(p[:, 0], p[:, 1])
    assert np.allclose(p, 0.25, atol=0.05)
    assert np.all(jittered.params["rho.w"] == 0)


def test_fuzz_random_inputs_finite():
    net = OptionNet(40, 4, 5, 3, 32, rng=3, zero_heads=False)
    obs = np.random.default_rng(0).integers(0, 2, (1000, 40))
    logp, log_rho = net.forward_policy(obs)
    assert np.all(np.isfinite(logp)) and np.all(np.isfinite(log_rho))
    assert np.allclose(np.exp(logp).sum(-1), 1, atol=1e-6)
    assert np.allclose(np.exp(log_rho).sum(-1), 1, atol=1e-6)


def test_dimension_mismatch():
    net = OptionNet(10, 4, 2, 1, 8, rng=0)
    with pytest.raises(ValueError):
        net.forward_policy(np.zeros(9))
    with pytest.raises(ValueError):
        net.forward_value(np.zeros((2, 11)))


@given(st.floats(-80, 80), st.floats(-80, 80))
def test_log_softmax_stable(a, b):
    x = np.array([[a, b, 0.0, 1e4]])
    out = log_softmax(x)
    assert np.all(np.isfinite(out)) and np.isclose(np.exp(out).sum(), 1.0)


def test_value_regression_decreases(rng):
    net = OptionNet(10, 4, 2, 2, 16, rng=1)
    obs = rng.integers(0, 2, (32, 10))
    target = rng.normal(size=32)
    opt = AdamW(net.params, 1e-3)
    losses = []
    for _ in range(100):
        v, cache = net.value_forward(obs)
        err = v.astype(np.float64) - target
        losses.append(np.mean(err ** 2))
        opt.step(net.params, net.value_backward(cache, (2 * err / 32).astype(np.float32)))
    assert losses[-1] < losses[0]
    assert all(b <= a + 1e-9 for a, b in zip(losses[:10], losses[1:11]))


def _value_loss(net, obs, target):
    v, _ = net.value_forward(obs)
    return float(np.mean((v - target) ** 2))


@pytest.mark.parametrize("seed", range(20))
def test_value_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = OptionNet(6, 4, 2, int(rng.integers(1, 4)), 6, dtype=np.float64, rng=seed, zero_heads=False)
    obs = rng.integers(0, 2, (5, 6))
    target = rng.normal(size=5)
    v, cache = net.value_forward(obs)
    g = net.value_backward(cache, 2 * (v - target) / 5)
    names = [k for k in net.params if net.is_value_param(k)]
    num = finite_difference_gradients(lambda: _value_loss(net, obs, target), net.params, names=names)
    assert max_relative_error(g, num, floor=1e-6) < 1e-6


def test_zero_upstream_gives_zero_gradients(rng):
    net = OptionNet(6, 4, 2, 2, 6, dtype=np.float64, rng=0, zero_heads=False)
    obs = rng.integers(0, 2, (3, 6))
    _, cache = net.value_forward(obs)
    g = net.value_backward(cache, np.zeros(3))
    assert all(np.all(v == 0) for v in g.values())
    logits, cache = net.policy_forward(obs)
    g = net.policy_backward(cache, {"option": np.zeros_like(logits["option"]), "rho": np.zeros_like(logits["rho"])})
    assert all(np.all(v == 0) for v in g.values())


def test_adamw_zero_gradient_no_decay():
    p = {"x": np.array([1.0, -2.0])}
    opt = AdamW(p, 0.1, weight_decay=0.0)
    for _ in range(5):
        opt.step(p, {"x": np.zeros(2)})
    assert np.array_equal(p["x"], [1.0, -2.0])


def test_adamw_decay_only():
    p = {"x": np.array([1.0, -2.0])}
    lr, wd = 0.1, 0.01
    opt = AdamW(p, lr, weight_decay=wd)
    for _ in range(3):
        opt.step(p, {"x": np.zeros(2)})
    assert np.allclose(p["x"], np.array([1.0, -2.0]) * (1 - lr * wd) ** 3)


def test_adamw_quadratic_bowl():
    p = {"x": np.array([1.0])}
    opt = AdamW(p, 1e-2)
    for i in range(10_000):
        opt.step(p, {"x": 2 * p["x"]})
        if abs(p["x"][0]) < 1e-3:
            break
    assert abs(p["x"][0]) < 1e-3


def test_adamw_per_tensor_step_sizes():
    p = {"value.0.w": np.ones(1), "trunk.0.w": np.ones(1)}
    opt = AdamW(p, lambda k: 2e-3 if k.startswith("value") else 1e-3, weight_decay=0.0)
    opt.step(p, {"value.0.w": np.ones(1), "trunk.0.w": np.ones(1)})
    assert np.isclose(1 - p["value.0.w"][0], 2 * (1 - p["trunk.0.w"][0]))


def test_seeded_updates_are_bitwise_identical(rng):
    obs = rng.integers(0, 2, (8, 10))

    def train():
        net = OptionNet(10, 4, 2, 2, 8, rng=5, option_init_scale=0.1)
        opt = AdamW(net.params, 1e-2)
        for _ in range(20):
            logits, cache = net.policy_forward(obs)
            g = net.policy_backward(cache, {"option": np.ones_like(logits["option"]), "rho": np.ones_like(logits["rho"])})
            opt.step(net.params, g)
        return net

    a, b = train(), train()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_checkpoint_round_trip(tmp_path):
    net = OptionNet(10, 4, 3, 2, 8, termination=True, rng=2, zero_heads=False)
    save_checkpoint(tmp_path / "c.bin", net, {"note": "x"})
    back, cfg = load_checkpoint(tmp_path / "c.bin")
    assert cfg == {"note": "x"}
    assert list(back.params) == list(net.params)
    assert all(np.array_equal(back.params[k], net.params[k]) for k in net.params)
    info = describe_checkpoint(tmp_path / "c.bin")
    assert info[0][0] == "trunk.0.w" and info[0][1] == (10, 8)


def test_checkpoint_is_little_endian_float32(tmp_path):
    net = OptionNet(3, 2, 1, 1, 2, rng=0, zero_heads=False)
    save_checkpoint(tmp_path / "c.bin", net)
    data = (tmp_path / "c.bin").read_bytes()
    version, hlen = struct.unpack_from("<II", data, 8)
    assert data[:8] == b"OPTITCKP" and version == 1
    first = np.frombuffer(data, "<f4", count=6, offset=16 + hlen)
    assert np.array_equal(first, net.params["trunk.0.w"].ravel())


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.bin")
    net = OptionNet(3, 2, 1, 1, 2, rng=0)
    save_checkpoint(tmp_path / "c.bin", net)
    (tmp_path / "c2.bin").write_bytes((tmp_path / "c.bin").read_bytes() + b"\0")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "c2.bin")


def test_fourth_order_stencil_is_exact_on_cubics():
    params = {"x": np.array([0.7, -1.3])}
    f = lambda: float(np.sum(params["x"] ** 3 - 2 * params["x"]))
    num = finite_difference_gradients(f, params, h=1e-2, points=4)["x"]
    assert np.allclose(num, 3 * params["x"] ** 2 - 2, rtol=1e-11)
    with pytest.raises(ValueError):
        finite_difference_gradients(f, params, points=3)
