import numpy as np
import pytest

from switchnet.env import MULTIPATH, SINGLEHOP, EnvParams
from switchnet.sampling import (CheckConfig, EnvSet, build_env_set, load_or_build,
                                sample_multipath_env, sample_singlehop_env,
                                stabilizability_check)

FAST = CheckConfig(num_traj=3, traj_len=3000)


def test_singlehop_sampler():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = sample_singlehop_env(rng)
        assert p.K == 4 and p.kind == SINGLEHOP
        assert np.all((p.lam > 0) & (p.lam < 3)) and np.all((p.mu > 0) & (p.mu < 3))
    a = sample_singlehop_env(np.random.default_rng(5))
    b = sample_singlehop_env(np.random.default_rng(5))
    assert a == b


def test_multipath_sampler():
    rng = np.random.default_rng(1)
    for _ in range(200):
        p = sample_multipath_env(rng)
        assert p.K == 8 and p.lam is None
        assert np.all((p.mu > 0) & (p.mu < 1))
    assert sample_multipath_env(np.random.default_rng(2)) == sample_multipath_env(np.random.default_rng(2))


def test_check_light_and_heavy():
    ok, J = stabilizability_check(EnvParams(SINGLEHOP, 4, mu=[3] * 4, lam=[0.1] * 4, seed=1), FAST)
    assert ok and 0 < J < 1
    ok, J = stabilizability_check(EnvParams(SINGLEHOP, 4, mu=[0.1] * 4, lam=[2.9] * 4, seed=1), FAST)
    assert not ok and J > 200


def test_check_zero_arrivals():
    ok, J = stabilizability_check(EnvParams(SINGLEHOP, 2, mu=[1, 1], lam=[0, 0], seed=0), FAST)
    assert ok and J == 0.0


def test_check_default_lengths():
    c = CheckConfig()
    assert (c.num_traj, c.traj_len, c.threshold, c.max_rejections) == (3, 50_000, 200.0, 1000)


def test_build_env_set_deterministic_and_batch_independent():
    a = build_env_set(SINGLEHOP, 3, 11, FAST)
    b = build_env_set(SINGLEHOP, 3, 11, CheckConfig(num_traj=3, traj_len=3000, batch=1))
    assert len(a) == 3 and len(a.baseline_costs) == 3
    assert a.envs == b.envs and a.baseline_costs == b.baseline_costs
    assert all(0 < J <= 200 for J in a.baseline_costs)
    # stored costs are the plain check's values
    for p, J in zip(a.envs, a.baseline_costs):
        assert stabilizability_check(p, FAST)[1] == J


def test_build_env_set_gives_up():
    with pytest.raises(RuntimeError, match="consecutive"):
        build_env_set(SINGLEHOP, 1, 0, CheckConfig(num_traj=1, traj_len=200, threshold=-1,
                                                   max_rejections=7, batch=4))
    with pytest.raises(ValueError):
        build_env_set(SINGLEHOP, 0, 0, FAST)


def test_env_set_csv_roundtrip(tmp_path):
    es = build_env_set(MULTIPATH, 2, 3, FAST)
    es.to_csv(tmp_path / "envs.csv")
    header = (tmp_path / "envs.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["env_id", "kind", "K"]
    assert header[3:11] == [f"lambda_{k}" for k in range(1, 9)]
    assert header[11:19] == [f"mu_{k}" for k in range(1, 9)]
    assert header[19] == "J_baseline"
    back = EnvSet.from_csv(tmp_path / "envs.csv", 3)
    assert back.envs == es.envs and back.baseline_costs == es.baseline_costs
    again = load_or_build(tmp_path / "envs.csv", MULTIPATH, 2, 3, FAST)
    assert again.envs == es.envs
    sub = es.subset([1])
    assert sub.envs == [es.envs[1]]
