"""Command-line entry point: ``python -m switchnet <subcommand>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .baselines import baseline_for
from .env import default_encoding
from .policies import load_policy
from .ppo import write_train_log
from .sampling import CheckConfig, EnvSet, build_env_set


def _ids(s):
    return [int(x) for x in s.split(",")] if s else None


def _config(args, study):
    d = {}
    if args.preset:
        d.update(ex.PRESETS[args.preset])
    if args.config:
        d.update(json.loads(Path(args.config).read_text()))
    d["study"] = study
    for key in ("kind", "env_count", "train_count", "master_seed", "steps_per_env", "encoding",
                "eval_num_traj", "eval_traj_len", "check_traj_len", "n_jobs", "output_dir",
                "outlier_threshold"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if args.seed is not None:
        d["seed"] = args.seed
    return ex.ExperimentConfig.from_dict(d)


def _study_args(p):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--preset", choices=sorted(ex.PRESETS))
    p.add_argument("--seed", type=int, help="training seed override")
    p.add_argument("--kind", choices=["singlehop", "multipath"])
    p.add_argument("--env-count", dest="env_count", type=int)
    p.add_argument("--train-count", dest="train_count", type=int)
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--steps-per-env", dest="steps_per_env", type=int)
    p.add_argument("--encoding", choices=["singlehop", "multipath", "bare"])
    p.add_argument("--eval-num-traj", dest="eval_num_traj", type=int)
    p.add_argument("--eval-traj-len", dest="eval_traj_len", type=int)
    p.add_argument("--check-traj-len", dest="check_traj_len", type=int)
    p.add_argument("--n-jobs", dest="n_jobs", type=int)
    p.add_argument("--outlier-threshold", dest="outlier_threshold", type=float)
    p.add_argument("--out", dest="output_dir")


def cmd_sample_envs(args):
    cfg = CheckConfig(num_traj=args.check_num_traj, traj_len=args.check_traj_len)
    es = build_env_set(args.kind, args.count, args.seed, cfg)
    es.to_csv(args.out)
    print(f"wrote {len(es)} {args.kind} environments to {args.out}")


def cmd_train(args):
    from .ppo import PpoConfig, train
    es = EnvSet.from_csv(args.envs)
    ids = _ids(args.env_ids) or list(range(len(es)))
    envs = [es.envs[i] for i in ids]
    costs = [es.baseline_costs[i] for i in ids]
    kw = json.loads(Path(args.ppo_config).read_text()) if args.ppo_config else {}
    kw["total_steps"] = args.steps_per_env * len(ids)
    kw["seed"] = args.seed
    kw.setdefault("encoding", args.encoding or default_encoding(es.kind))
    if args.learning_rate is not None:
        kw["learning_rate"] = args.learning_rate
    res = train(envs, args.policy, PpoConfig(**kw), baseline_costs=costs, env_ids=ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.policy.save(out / "policy.json")
    res.critic.save(out / "critic.json")
    write_train_log(out / "train_log.csv", res.log)
    print(f"trained {args.policy} on envs {ids}; diverged={res.diverged}")


def cmd_eval(args):
    es = EnvSet.from_csv(args.envs)
    train_ids = _ids(args.train_ids) or []
    if args.policy_file:
        pol = load_policy(args.policy_file)
        records = ex.evaluate_policy(pol, es.envs, es.baseline_costs, args.num_traj,
                                     args.traj_len, train_ids=train_ids, name=args.name)
    else:
        from .baselines import run_policy
        base = baseline_for(es.kind)
        records = []
        for j, p in enumerate(es.envs):
            c, o = run_policy([p] * args.num_traj, ex.eval_seeds(p, args.num_traj),
                              lambda q, y, env: base(q, y), args.traj_len)
            J = float(c.mean())
            records.append(ex.EvalRecord(j, args.name or "baseline", J, J / es.baseline_costs[j],
                                         j in train_ids, bool(o.any())))
    ex.write_eval_records(args.out, records)
    print(f"wrote {len(records)} records to {args.out}")


def cmd_summarize(args):
    recs = ex.read_eval_records(args.records)
    rows = ex.summarize(recs, args.threshold)
    ex.write_rows(args.out, rows, ex.SUMMARY_FIELDS)
    for r in rows:
        print(f"{r['policy']:>4} {r['split']:>5}  mean {r['mean']:.3f} ({r['std']:.3f})  "
              f"rejected {r['mean_rejected']:.3f} ({r['std_rejected']:.3f})  omitted {r['omitted']}")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="switchnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-envs", help="sample stabilizable environments")
    p.add_argument("--kind", choices=["singlehop", "multipath"], default="singlehop")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--check-num-traj", type=int, default=3)
    p.add_argument("--check-traj-len", type=int, default=50_000)
    p.add_argument("--out", default="envs.csv")
    p.set_defaults(func=cmd_sample_envs)

    p = sub.add_parser("train", help="train one policy on one or more envs")
    p.add_argument("--envs", required=True)
    p.add_argument("--env-ids", help="comma separated env ids (default: all)")
    p.add_argument("--policy", choices=["stn", "mlp"], default="stn")
    p.add_argument("--steps-per-env", type=int, default=1_000_000)
    p.add_argument("--encoding", choices=["singlehop", "multipath", "bare"])
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--ppo-config", help="JSON file with PpoConfig overrides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="deterministic evaluation on every env of a set")
    p.add_argument("--envs", required=True)
    p.add_argument("--policy-file", help="saved policy (default: the kind's baseline)")
    p.add_argument("--name")
    p.add_argument("--train-ids")
    p.add_argument("--num-traj", type=int, default=3)
    p.add_argument("--traj-len", type=int, default=50_000)
    p.add_argument("--out", default="eval_records.csv")
    p.set_defaults(func=cmd_eval)

    for name, study, fn in (("single-env-study", "single_env", ex.run_single_env_study),
                            ("generalization-study", "generalization", ex.run_generalization_study),
                            ("dp-demo", "dp_demo", ex.run_dp_demo)):
        p = sub.add_parser(name)
        _study_args(p)
        p.set_defaults(func=lambda a, study=study, fn=fn: fn(_config(a, study)))

    p = sub.add_parser("summarize", help="aggregate eval records per policy and split")
    p.add_argument("--records", default="eval_records.csv")
    p.add_argument("--threshold", type=float, default=5.0)
    p.add_argument("--out", default="summary.csv")
    p.set_defaults(func=cmd_summarize)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
