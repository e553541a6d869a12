import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_diff, rel_error
from switchnet.autodiff import log_softmax
from switchnet.env import ENC_SINGLEHOP, MULTIPATH, SINGLEHOP, EnvParams, VecQueueEnv
from switchnet.policies import CriticNet, make_policy
from switchnet.ppo import (MovingAverage, PpoConfig, collect_rollout, compute_gae, normalize,
                           ppo_loss, surrogate, train, write_train_log)


def brute_gae(r, v, last, gamma, lam):
    T = len(r)
    vn = np.append(v[1:], last)
    delta = r + gamma * vn - v
    return np.array([sum((gamma * lam) ** (l - t) * delta[l] for l in range(t, T)) for t in range(T)])


def test_gae_examples():
    adv, tgt = compute_gae([1.0, 1.0], [0.5, 0.5], 0.5, 1.0, 1.0)
    np.testing.assert_allclose(adv, [2.0, 1.0])
    np.testing.assert_allclose(tgt, [2.5, 1.5])
    r, v = np.array([1.0, -2.0, 0.3]), np.array([0.1, 0.4, -0.2])
    adv, _ = compute_gae(r, v, 0.7, 0.9, 0.0)
    np.testing.assert_allclose(adv, r + 0.9 * np.array([0.4, -0.2, 0.7]) - v, atol=1e-15)


@settings(max_examples=50)
@given(st.integers(1, 40), st.floats(0.5, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_gae_matches_brute_force(T, gamma, lam, seed):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(0, 5, T), rng.normal(0, 5, T)
    last = rng.normal()
    adv, tgt = compute_gae(r, v, last, gamma, lam)
    np.testing.assert_allclose(adv, brute_gae(r, v, last, gamma, lam), atol=1e-8, rtol=0)
    np.testing.assert_allclose(tgt, adv + v, atol=1e-12)


def test_gae_per_env_columns():
    rng = np.random.default_rng(0)
    r, v, last = rng.normal(size=(30, 3)), rng.normal(size=(30, 3)), rng.normal(size=3)
    adv, _ = compute_gae(r, v, last, 0.99, 0.95)
    for e in range(3):
        np.testing.assert_allclose(adv[:, e], brute_gae(r[:, e], v[:, e], last[e], 0.99, 0.95), atol=1e-8)


@given(arrays(np.float64, st.integers(2, 200), elements=st.floats(-1e4, 1e4)))
def test_normalize(x):
    if np.ptp(x) < 1e-3:
        return
    y = normalize(x)
    s = x.std()
    assert abs(y.mean()) <= 1e-10
    assert abs(y.std() - s / (s + 1e-12)) <= 1e-12


def test_clip_arithmetic():
    assert surrogate(np.array([1.5]), np.array([1.0]), 0.1)[0] == pytest.approx(1.1)
    assert surrogate(np.array([0.5]), np.array([-1.0]), 0.1)[0] == pytest.approx(-0.9)
    assert surrogate(np.array([1.0]), np.array([3.0]), 0.1)[0] == 3.0


def _setup(seed=0, kind="stn", B=24, K=3):
    rng = np.random.default_rng(seed)
    kw = {"width": 6} if kind == "stn" else {"hidden": (5, 5)}
    pol = make_policy(kind, K, ENC_SINGLEHOP, rng=rng, **kw)
    critic = CriticNet(K, 4, hidden=(5, 4), rng=rng, value_scale=3.0)
    obs = rng.exponential(2.0, (B, K, 4))
    z = pol.logits(obs)
    a = rng.integers(0, K, B)
    mb = {"obs": obs, "actions": a, "advantages": rng.normal(size=B), "targets": rng.normal(0, 3, B),
          "log_probs": log_softmax(z)[np.arange(B), a]}
    return pol, critic, mb


def test_ratio_one_identity():
    pol, critic, mb = _setup()
    cfg = PpoConfig(entropy_coef=0.0, value_coef=0.0)
    pol.zero_grad()
    critic.zero_grad()
    _, d = ppo_loss(pol, critic, mb, cfg)
    assert d["ratio_mean"] == pytest.approx(1.0, abs=1e-12) and d["clip_fraction"] == 0.0
    assert d["loss"] == pytest.approx(-mb["advantages"].mean(), abs=1e-12)
    analytic = [g.copy() for g in pol.grads()]
    # vanilla policy gradient objective mean(ratio * A), no clipping
    def vanilla():
        lp = log_softmax(pol.logits(mb["obs"]))[np.arange(len(mb["actions"])), mb["actions"]]
        return -float(np.mean(np.exp(lp - mb["log_probs"]) * mb["advantages"]))
    assert rel_error(analytic, central_diff(vanilla, pol.params())) <= 1e-4


@pytest.mark.parametrize("kind", ["stn", "mlp"])
def test_loss_gradient_matches_finite_differences(kind):
    pol, critic, mb = _setup(seed=3, kind=kind)
    # move the old policy so some ratios leave the clip range, far from its edges
    rng = np.random.default_rng(1)
    mb["log_probs"] = mb["log_probs"] + rng.choice([-0.5, 0.0, 0.03, 0.5], len(mb["actions"]))
    cfg = PpoConfig(clip_eps=0.2)
    pol.zero_grad()
    critic.zero_grad()
    _, d = ppo_loss(pol, critic, mb, cfg)
    assert 0 < d["clip_fraction"] < 1
    analytic = [g.copy() for g in pol.grads() + critic.grads()]
    f = lambda: ppo_loss(pol, critic, mb, cfg, backward=False)[0]
    numeric = central_diff(f, pol.params() + critic.params())
    assert rel_error(analytic, numeric) <= 1e-4


def test_loss_diagnostics_and_nonfinite():
    pol, critic, mb = _setup(seed=5)
    _, d = ppo_loss(pol, critic, mb, PpoConfig(), backward=False)
    assert 0 <= d["clip_fraction"] <= 1 and d["entropy"] >= 0 and d["value_loss"] >= 0
    mb["advantages"][0] = np.inf
    with pytest.raises(FloatingPointError):
        ppo_loss(pol, critic, mb, PpoConfig(), backward=False)


def test_config_defaults_and_validation():
    c = PpoConfig()
    assert (c.steps_per_env, c.minibatch_size, c.epochs_per_batch) == (2000, 100, 3)
    assert (c.gae_lambda, c.clip_eps, c.entropy_coef, c.moving_avg_window) == (0.95, 0.1, 0.01, 5000)
    assert c.lr_for("stn") == 3e-3 and c.lr_for("mlp") == 3e-4
    assert PpoConfig(learning_rate=1e-2).lr_for("stn") == 1e-2
    assert c.total_steps // c.steps_per_env == 500
    for bad in ({"gae_lambda": 0.0}, {"clip_eps": 1.0}, {"minibatch_size": 300}):
        with pytest.raises(ValueError):
            PpoConfig(**bad)


def _envs(n):
    return [EnvParams(SINGLEHOP, 2, mu=[1.5, 1.2], lam=[0.4 + 0.1 * i, 0.5], seed=10 + i) for i in range(n)]


def test_collect_rollout_shapes_and_determinism():
    def run():
        envs = _envs(5)
        env = VecQueueEnv(envs, [np.random.default_rng(i) for i in range(5)])
        env.reset()
        pol = make_policy("stn", 2, ENC_SINGLEHOP, rng=0)
        critic = CriticNet(2, 4, rng=0)
        return collect_rollout(env, pol, critic, 2000, [np.random.default_rng(100 + i) for i in range(5)],
                               ENC_SINGLEHOP)
    a, b = run(), run()
    assert len(a) == 10_000 and a.obs.shape == (2000, 5, 2, 4)
    assert np.all(np.isfinite(a.log_probs)) and np.all(a.costs >= 0)
    for k in ("obs", "actions", "log_probs", "costs", "values", "last_values"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))
    assert a.costs[0].sum() == 0  # empty start


def test_moving_average():
    ma = MovingAverage(2, 3)
    ma.push(np.array([[1.0, 0.0], [2.0, 0.0]]))
    np.testing.assert_allclose(ma.value(), [1.5, 0.0])
    ma.push(np.array([[3.0, 3.0], [4.0, 3.0]]))
    np.testing.assert_allclose(ma.value(), [3.0, 2.0])


def test_train_small_run_deterministic(tmp_path):
    cfg = PpoConfig(steps_per_env=200, minibatch_size=50, total_steps=800, seed=3)
    envs = _envs(2)
    r1 = train(envs, "stn", cfg, baseline_costs=[1.0, 2.0])
    r2 = train(envs, "stn", cfg, baseline_costs=[1.0, 2.0])
    assert r1.log == r2.log
    assert [r["step"] for r in r1.log] == [200, 200, 400, 400]
    assert {r["learning_rate"] for r in r1.log} == {3e-3}
    write_train_log(tmp_path / "a.csv", r1.log)
    write_train_log(tmp_path / "b.csv", r2.log)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = next(csv.reader(open(tmp_path / "a.csv")))
    assert header == ["step", "env_id", "moving_avg_cost", "loss", "clip_fraction", "entropy",
                      "learning_rate"]
    obs = np.random.default_rng(0).exponential(1.0, (4, 2, 4))
    np.testing.assert_array_equal(r1.policy.logits(obs), r2.policy.logits(obs))


def test_train_divergence_keeps_last_good(monkeypatch):
    import switchnet.ppo as ppo
    calls = {"n": 0}
    real = ppo.ppo_loss

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] > 8:  # second batch
            raise FloatingPointError("boom")
        return real(*a, **k)
    monkeypatch.setattr(ppo, "ppo_loss", flaky)
    cfg = PpoConfig(steps_per_env=100, minibatch_size=50, total_steps=1000)
    res = train(_envs(1), "mlp", cfg)
    assert res.diverged
    assert all(np.all(np.isfinite(p)) for p in res.policy.params())
    assert len(res.log) == 2


def test_train_multipath_runs():
    envs = [EnvParams(MULTIPATH, 3, mu=[0.5, 0.4, 0.6], seed=1)]
    res = train(envs, "stn", PpoConfig(steps_per_env=100, minibatch_size=50, total_steps=200))
    assert len(res.log) == 2 and not res.overflowed
