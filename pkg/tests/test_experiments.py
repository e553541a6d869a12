import csv
import json

import numpy as np
import pytest

from switchnet import experiments as ex
from switchnet.baselines import maxweight_batch
from switchnet.cli import main
from switchnet.env import ENC_BARE, ENC_MULTIPATH, ENC_SINGLEHOP, MULTIPATH, SINGLEHOP, EnvParams
from switchnet.baselines import run_policy, trajectory_seed
from switchnet.sampling import CHECK_PURPOSE, CheckConfig, build_env_set, stabilizability_check


def rec(J0, policy="stn", train=False, env_id=0):
    return ex.EvalRecord(env_id, policy, J0, J0, train, False)


def test_summarize_example():
    (row,) = ex.summarize([rec(0.8), rec(0.9), rec(7.0)], 5)
    assert row["mean"] == pytest.approx(2.9)
    assert row["mean_rejected"] == pytest.approx(0.85)
    assert row["omitted"] == 1 and row["n"] == 3
    assert row["std"] == pytest.approx(np.std([0.8, 0.9, 7.0]))


def test_summarize_no_outliers_and_splits():
    rows = ex.summarize([rec(0.5, train=True), rec(1.5), rec(1.0, "mlp"), rec(2.0)])
    by = {(r["policy"], r["split"]): r for r in rows}
    assert set(by) == {("stn", "train"), ("stn", "test"), ("mlp", "test")}
    t = by[("stn", "test")]
    assert (t["mean"], t["std"], t["omitted"]) == (t["mean_rejected"], t["std_rejected"], 0)
    with pytest.raises(ValueError):
        ex.summarize([])


def test_histogram_rows():
    rows = ex.histogram_rows([rec(0.1), rec(0.3), rec(7.0), rec(1e12)])
    counts = {(r["bin_lo"], r["bin_hi"]): r["count"] for r in rows}
    assert counts[(0.0, 0.25)] == 1 and counts[(0.25, 0.5)] == 1
    assert counts[(5.0, 10.0)] == 1 and counts[(1e9, np.inf)] == 1
    assert sum(counts.values()) == 4


def test_crossing_step():
    assert ex.crossing_step([10, 20, 30], [0.5, -0.1, -0.2]) == 20
    assert ex.crossing_step([10, 20], [0.5, 0.0]) is None


def test_eval_records_roundtrip(tmp_path):
    recs = [ex.EvalRecord(3, "mlp", 12.5, 1.25, True, False), ex.EvalRecord(4, "stn", 1e9, 1e7, False, True)]
    ex.write_eval_records(tmp_path / "r.csv", recs)
    assert ex.read_eval_records(tmp_path / "r.csv") == recs
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "env_id,policy,J,J0,in_train_split,overflowed"


class _MaxWeight:
    kind, scheme = "maxweight", ENC_BARE

    def act_deterministic(self, obs):
        # bare single-hop rows are (q, y)
        return maxweight_batch(obs[..., 0], obs[..., 1])


def test_baseline_normalizes_to_one():
    cc = CheckConfig(traj_len=20_000)
    es = build_env_set(SINGLEHOP, 2, 5, cc)
    # matched seeds reproduce the stored baseline cost exactly
    for p, Jb in zip(es.envs, es.baseline_costs):
        seeds = [trajectory_seed(p.seed, i, CHECK_PURPOSE) for i in range(3)]
        c, _ = run_policy([p] * 3, seeds, lambda q, y, env: maxweight_batch(q, y), 20_000)
        assert float(c.mean()) / Jb == 1.0
    # fresh evaluation seeds stay within 5% on a lightly loaded env
    light = EnvParams(SINGLEHOP, 4, mu=[2.0, 1.5, 2.5, 1.0], lam=[0.3, 0.2, 0.4, 0.1], seed=9)
    Jb = stabilizability_check(light, CheckConfig())[1]
    recs = ex.evaluate_policy(_MaxWeight(), [light, light], [Jb, Jb], 3, 50_000, train_ids=[0])
    assert [r.in_train_split for r in recs] == [True, False]
    for r in recs:
        assert abs(r.J0 - 1.0) <= 0.05


def test_config_and_presets(tmp_path):
    cfg = ex.preset("generalization_desk")
    assert (cfg.env_count, cfg.train_count, cfg.steps_per_env) == (20, 3, 200_000)
    assert cfg.resolved_encoding() == ENC_SINGLEHOP
    assert ex.ExperimentConfig(kind=MULTIPATH, study="generalization", train_count=1).resolved_encoding() == ENC_MULTIPATH
    assert ex.preset("single_env_desk").resolved_encoding() == ENC_BARE
    p = cfg.ppo_config("mlp", 3)
    assert p.total_steps == 600_000 and p.lr_for("mlp") == 3e-4
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert ex.ExperimentConfig.load(tmp_path / "c.json") == cfg
    with pytest.raises(ValueError):
        ex.ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ex.ExperimentConfig(study="generalization", env_count=3, train_count=3)
    assert ex.preset("single_env_full").steps_per_env == 1_000_000
    g = ex.preset("generalization_full")
    assert (g.env_count, g.train_count) == (100, 5)


def _tiny(study, out, **kw):
    d = dict(study=study, env_count=3, train_count=1, steps_per_env=400, check_traj_len=2000,
             eval_traj_len=500, output_dir=str(out), ppo={"steps_per_env": 200, "minibatch_size": 50})
    d.update(kw)
    return ex.ExperimentConfig(**d)


def test_single_env_study_outputs(tmp_path):
    rows, recs = ex.run_single_env_study(_tiny("single_env", tmp_path, env_count=2))
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "config.json", "envs.csv", "eval_records.csv", "summary.csv", "train_log.csv"]
    assert len(recs) == 4 and all(r.in_train_split for r in recs)
    assert len(rows) == 2 * 2 * 2
    r = rows[0]
    assert r["log_norm_ma"] == pytest.approx(np.log(r["moving_avg_cost"] / 1.0) - np.log(
        [float(x["J_baseline"]) for x in csv.DictReader(open(tmp_path / "envs.csv"))][r["env_id"]]))


def test_generalization_study_outputs(tmp_path):
    _, recs = ex.run_generalization_study(_tiny("generalization", tmp_path))
    assert len(recs) == 6
    assert sum(r.in_train_split for r in recs) == 2
    # every env sits in exactly one split per policy
    for pol in ("stn", "mlp"):
        assert sorted(r.env_id for r in recs if r.policy == pol) == [0, 1, 2]
    assert (tmp_path / "histogram.csv").exists() and (tmp_path / "policy_stn.json").exists()


def test_lr_sweep(tmp_path):
    best = ex.run_lr_sweep(_tiny("single_env", tmp_path, env_count=1), rates=(1e-3, 1e-4))
    assert set(best) == {"stn", "mlp"} and best["stn"] in (1e-3, 1e-4)
    assert len(list(csv.DictReader(open(tmp_path / "lr_sweep.csv")))) == 4


def test_cli_end_to_end(tmp_path, capsys):
    envs = tmp_path / "envs.csv"
    assert main(["sample-envs", "--count", "2", "--seed", "4", "--check-traj-len", "2000",
                 "--out", str(envs)]) == 0
    run = tmp_path / "run"
    main(["train", "--envs", str(envs), "--env-ids", "0", "--policy", "stn", "--steps-per-env", "400",
          "--out", str(run)])
    assert {"policy.json", "critic.json", "train_log.csv"} <= {p.name for p in run.iterdir()}
    main(["eval", "--envs", str(envs), "--policy-file", str(run / "policy.json"), "--train-ids", "0",
          "--traj-len", "500", "--out", str(tmp_path / "e.csv")])
    main(["eval", "--envs", str(envs), "--traj-len", "500", "--out", str(tmp_path / "b.csv")])
    main(["summarize", "--records", str(tmp_path / "e.csv"), "--out", str(tmp_path / "s.csv")])
    out = capsys.readouterr().out
    assert "omitted" in out
    assert len(ex.read_eval_records(tmp_path / "b.csv")) == 2
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"env_count": 2, "steps_per_env": 400, "check_traj_len": 2000,
                               "eval_traj_len": 300, "ppo": {"steps_per_env": 200, "minibatch_size": 50}}))
    main(["single-env-study", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "s1")])
    assert json.loads((tmp_path / "s1" / "config.json").read_text())["seed"] == 2


def test_cli_dp_demo(tmp_path):
    main(["dp-demo", "--out", str(tmp_path)])
    names = sorted(p.name for p in tmp_path.glob("regions_y*.csv"))
    assert len(names) == 9 and "regions_y11.csv" in names
    row = next(csv.DictReader(open(tmp_path / "switch_type.csv")))
    assert row["switch_type"] == "True" and row["counterexamples"] == "0"


def test_cli_rejects_unknown_command():
    with pytest.raises(SystemExit):
        main(["nope"])
