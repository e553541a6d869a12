"""Study drivers: single-environment training, zero-shot generalization, DP demo.

All outputs are CSV files whose bytes depend only on the configuration and its
seeds; ``n_jobs`` only changes wall-clock time.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines import run_policy, trajectory_seed
from .dp import SYMMETRIC, approximate_mdp_sequence, export_decision_regions, is_switch_type
from .env import ENC_BARE, SINGLEHOP, default_encoding
from .ppo import PpoConfig, train, write_train_log
from .sampling import CheckConfig, EnvSet, build_env_set

log = logging.getLogger(__name__)

EVAL_PURPOSE = 2
ARCHITECTURES = ("stn", "mlp")


@dataclass
class ExperimentConfig:
    study: str = "single_env"           # single_env | generalization | dp_demo
    kind: str = SINGLEHOP
    env_count: int = 5
    train_count: int = 5                # generalization: first train_count envs train, rest test
    master_seed: int = 0
    architectures: tuple = ARCHITECTURES
    steps_per_env: int = 1_000_000      # training steps collected from each training env
    encoding: str | None = None         # None: bare for single_env, kind default otherwise
    ppo: dict = field(default_factory=dict)        # PpoConfig overrides shared by both nets
    ppo_stn: dict = field(default_factory=dict)
    ppo_mlp: dict = field(default_factory=dict)
    eval_num_traj: int = 3
    eval_traj_len: int = 50_000
    check_num_traj: int = 3
    check_traj_len: int = 50_000
    check_threshold: float = 200.0
    outlier_threshold: float = 5.0
    seed: int = 0                       # training seed
    n_jobs: int = 1
    output_dir: str = "results"
    dp_region: int = 20
    dp_L_schedule: tuple = (25, 30, 35, 40, 45, 50)

    def __post_init__(self):
        self.architectures = tuple(self.architectures)
        self.dp_L_schedule = tuple(self.dp_L_schedule)
        if self.study == "generalization" and not 0 < self.train_count < self.env_count:
            raise ValueError("train_count must be between 1 and env_count - 1")

    def resolved_encoding(self) -> str:
        if self.encoding is not None:
            return self.encoding
        return ENC_BARE if self.study == "single_env" else default_encoding(self.kind)

    def ppo_config(self, arch: str, n_envs: int) -> PpoConfig:
        kw = dict(self.ppo)
        kw.update(self.ppo_stn if arch == "stn" else self.ppo_mlp)
        kw.setdefault("seed", self.seed)
        kw["encoding"] = self.resolved_encoding()
        kw["total_steps"] = self.steps_per_env * n_envs
        return PpoConfig(**kw)

    def check_config(self) -> CheckConfig:
        return CheckConfig(num_traj=self.check_num_traj, traj_len=self.check_traj_len,
                           threshold=self.check_threshold)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


PRESETS = {
    "single_env_full": dict(study="single_env", env_count=5, steps_per_env=1_000_000),
    "single_env_desk": dict(study="single_env", env_count=3, steps_per_env=300_000),
    "generalization_full": dict(study="generalization", env_count=100, train_count=5,
                                 steps_per_env=2_000_000),
    "generalization_desk": dict(study="generalization", env_count=20, train_count=3,
                                steps_per_env=200_000),
    "dp_demo": dict(study="dp_demo"),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    d = dict(PRESETS[name])
    d.update(overrides)
    return ExperimentConfig(**d)


@dataclass
class EvalRecord:
    env_id: int
    policy: str
    J: float
    J0: float
    in_train_split: bool
    overflowed: bool


EVAL_FIELDS = ["env_id", "policy", "J", "J0", "in_train_split", "overflowed"]


def eval_seeds(env, num_traj):
    # shared by every architecture evaluated on this env
    return [trajectory_seed(env.seed, i, EVAL_PURPOSE) for i in range(num_traj)]


def evaluate_policy(policy, envs, baseline_costs, num_traj=3, traj_len=50_000,
                    train_ids=(), env_ids=None, name=None):
    """Deterministic (argmax) evaluation of one policy on every env, runs in lock step."""
    ids = list(range(len(envs))) if env_ids is None else list(env_ids)
    scheme = policy.scheme
    params, seeds = [], []
    for p in envs:
        params += [p] * num_traj
        seeds += eval_seeds(p, num_traj)

    def act(q, y, env):
        return policy.act_deterministic(env.observe(scheme))

    costs, over = run_policy(params, seeds, act, traj_len)
    costs = costs.reshape(len(envs), num_traj).mean(axis=1)
    over = over.reshape(len(envs), num_traj).any(axis=1)
    name = name or policy.kind
    train_ids = set(train_ids)
    return [EvalRecord(i, name, float(J), float(J / Jb), i in train_ids, bool(o))
            for i, J, Jb, o in zip(ids, costs, baseline_costs, over)]


def write_eval_records(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_FIELDS)
        for r in records:
            w.writerow([r.env_id, r.policy, repr(r.J), repr(r.J0), int(r.in_train_split),
                        int(r.overflowed)])


def read_eval_records(path):
    with open(path, newline="") as fh:
        return [EvalRecord(int(r["env_id"]), r["policy"], float(r["J"]), float(r["J0"]),
                           bool(int(r["in_train_split"])), bool(int(r["overflowed"])))
                for r in csv.DictReader(fh)]


def summarize(records, outlier_threshold: float = 5.0):
    """Mean/std of J0 per (policy, split), plus outlier-rejected mean/std.

    Values of J0 above ``outlier_threshold`` are left out of the rejected
    statistics; stds are population stds.
    """
    groups = {}
    for r in records:
        split = "train" if r.in_train_split else "test"
        groups.setdefault((r.policy, split), []).append(r.J0)
    if not groups:
        raise ValueError("no records to summarize")
    rows = []
    for (pol, split), vals in sorted(groups.items()):
        v = np.asarray(vals)
        kept = v[v <= outlier_threshold]
        rows.append({
            "policy": pol, "split": split, "n": len(v),
            "mean": float(v.mean()), "std": float(v.std()),
            "mean_rejected": float(kept.mean()) if kept.size else float("nan"),
            "std_rejected": float(kept.std()) if kept.size else float("nan"),
            "omitted": int(v.size - kept.size),
        })
    return rows


SUMMARY_FIELDS = ["policy", "split", "n", "mean", "std", "mean_rejected", "std_rejected",
                  "omitted"]


def write_rows(path, rows, fieldnames):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fieldnames)
        for r in rows:
            w.writerow([repr(float(r[f])) if isinstance(r[f], (float, np.floating)) else r[f]
                        for f in fieldnames])


def histogram_rows(records, outlier_threshold=5.0, width=0.25,
                   outlier_edges=(10.0, 100.0, 1e3, 1e4, 1e6, 1e9)):
    """Fixed-width J0 bins up to the threshold, coarse bins beyond it."""
    edges = list(np.round(np.arange(0.0, outlier_threshold + 1e-9, width), 10))
    edges += [e for e in outlier_edges if e > outlier_threshold] + [np.inf]
    groups = {}
    for r in records:
        split = "train" if r.in_train_split else "test"
        groups.setdefault((r.policy, split), []).append(r.J0)
    rows = []
    for (pol, split), vals in sorted(groups.items()):
        counts, _ = np.histogram(vals, bins=edges)
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            rows.append({"policy": pol, "split": split, "bin_lo": float(lo), "bin_hi": float(hi),
                         "count": int(c)})
    return rows


def crossing_step(steps, log_norm):
    """First logged step where the log normalized moving average drops below 0."""
    for s, v in zip(steps, log_norm):
        if v < 0.0:
            return int(s)
    return None


def _train_job(args):
    envs, costs, env_ids, arch, ppo_cfg = args
    res = train(envs, arch, ppo_cfg, baseline_costs=costs, env_ids=env_ids)
    return res


def _map(fn, jobs, n_jobs):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, jobs))


def _train_log_rows(res, arch, baseline_costs):
    rows = []
    for r in res.log:
        Jb = baseline_costs[r["env_id"]]
        rows.append(dict(r, policy=arch,
                         log_norm_ma=float(np.log(max(r["moving_avg_cost"], 1e-300) / Jb))))
    return rows


def _env_set(cfg: ExperimentConfig, out: Path) -> EnvSet:
    es = build_env_set(cfg.kind, cfg.env_count, cfg.master_seed, cfg.check_config())
    es.to_csv(out / "envs.csv")
    return es


def run_single_env_study(cfg: ExperimentConfig, env_set: EnvSet | None = None):
    """Train each architecture separately on every env, then evaluate it there.

    Writes envs.csv, train_log.csv, eval_records.csv and summary.csv to
    ``cfg.output_dir`` and returns (train_rows, eval_records).
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    es = env_set if env_set is not None else _env_set(cfg, out)
    if env_set is not None:
        es.to_csv(out / "envs.csv")
    jobs = []
    for j, p in enumerate(es.envs):
        for arch in cfg.architectures:
            jobs.append(([p], [es.baseline_costs[j]], [j], arch, cfg.ppo_config(arch, 1)))
    results = _map(_train_job, jobs, cfg.n_jobs)
    train_rows, records = [], []
    for (envs, costs, ids, arch, _), res in zip(jobs, results):
        if res.diverged:
            log.warning("training diverged for %s on env %d", arch, ids[0])
        train_rows += _train_log_rows(res, arch, es.baseline_costs)
        records += evaluate_policy(res.policy, envs, costs, cfg.eval_num_traj, cfg.eval_traj_len,
                                   train_ids=ids, env_ids=ids, name=arch)
    write_train_log(out / "train_log.csv", train_rows, extra_fields=("policy", "log_norm_ma"))
    write_eval_records(out / "eval_records.csv", records)
    write_rows(out / "summary.csv", summarize(records, cfg.outlier_threshold), SUMMARY_FIELDS)
    (out / "config.json").write_text(cfg.to_json())
    return train_rows, records


def run_generalization_study(cfg: ExperimentConfig, env_set: EnvSet | None = None):
    """Train one policy per architecture on the train split, evaluate on every env."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    es = env_set if env_set is not None else _env_set(cfg, out)
    if env_set is not None:
        es.to_csv(out / "envs.csv")
    train_ids = list(range(cfg.train_count))
    train_envs = [es.envs[i] for i in train_ids]
    train_costs = [es.baseline_costs[i] for i in train_ids]
    jobs = [(train_envs, train_costs, train_ids, arch, cfg.ppo_config(arch, len(train_ids)))
            for arch in cfg.architectures]
    results = _map(_train_job, jobs, cfg.n_jobs)
    train_rows, records = [], []
    for arch, res in zip(cfg.architectures, results):
        train_rows += _train_log_rows(res, arch, es.baseline_costs)
        records += evaluate_policy(res.policy, es.envs, es.baseline_costs, cfg.eval_num_traj,
                                   cfg.eval_traj_len, train_ids=train_ids, name=arch)
        res.policy.save(out / f"policy_{arch}.json")
    write_train_log(out / "train_log.csv", train_rows, extra_fields=("policy", "log_norm_ma"))
    write_eval_records(out / "eval_records.csv", records)
    write_rows(out / "summary.csv", summarize(records, cfg.outlier_threshold), SUMMARY_FIELDS)
    write_rows(out / "histogram.csv", histogram_rows(records, cfg.outlier_threshold),
               ["policy", "split", "bin_lo", "bin_hi", "count"])
    (out / "config.json").write_text(cfg.to_json())
    return train_rows, records


def run_dp_demo(cfg: ExperimentConfig):
    """Solve the symmetric two-queue MDP, write one region CSV per capacity slice."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = approximate_mdp_sequence(SYMMETRIC, cfg.dp_region, cfg.dp_L_schedule)
    table = res.table
    ys = table.capacity_support
    for y1 in ys:
        for y2 in ys:
            export_decision_regions(table, (y1, y2), out / f"regions_y{y1}{y2}.csv")
    ok, bad = is_switch_type(table)
    report = {"switch_type": ok, "counterexamples": len(bad), "L": res.L,
              "gain": res.history[-1][1].gain, "region": cfg.dp_region}
    write_rows(out / "switch_type.csv", [report], list(report))
    return report


def run_lr_sweep(cfg: ExperimentConfig, rates=(1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5),
                 env_set: EnvSet | None = None):
    """Re-run the single-env study per learning rate; pick, per architecture,
    the rate with the lowest mean evaluation J0 over the training envs."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    es = env_set if env_set is not None else _env_set(cfg, out)
    rows = []
    for lr in rates:
        sub = ExperimentConfig.from_dict(dict(asdict(cfg), output_dir=str(out / f"lr_{lr:g}"),
                                              ppo=dict(cfg.ppo, learning_rate=lr)))
        _, records = run_single_env_study(sub, es)
        for arch in cfg.architectures:
            J0 = [r.J0 for r in records if r.policy == arch]
            rows.append({"policy": arch, "learning_rate": float(lr), "mean_J0": float(np.mean(J0))})
    write_rows(out / "lr_sweep.csv", rows, ["policy", "learning_rate", "mean_J0"])
    best = {}
    for arch in cfg.architectures:
        cand = [r for r in rows if r["policy"] == arch]
        best[arch] = min(cand, key=lambda r: r["mean_J0"])["learning_rate"]
    return best
