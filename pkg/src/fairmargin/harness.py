"""Experiment orchestration: config, staged pipeline, reports, sweeps.

A run directory holds one experiment: per-seed subdirectories with every
intermediate artifact (dataset splits, warmup checkpoint, transition
logs, policy, trained models, reports) plus an aggregate report and a
manifest.  Stages are skipped on re-run when their outputs exist and the
config hash matches; a stage that does run forces everything downstream
of it for that seed.  All artifacts are plain text with deterministic
bytes, so identical configs give byte-identical runs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .adaptive import (
    AdaptiveTrainConfig,
    BaselineMode,
    evaluate,
    save_margin_history,
    train_adaptive,
    train_baseline,
)
from .data import (
    DatasetSpec,
    generate_synthetic,
    load_dataset,
    load_pair_indices,
    make_verification_pair_indices,
    pairs_from_indices,
    save_dataset,
    save_pair_indices,
    split_train_val,
)
from .errors import ConfigurationError
from .mdp import StateSpace, margin_grid_for
from .metrics import (
    BiasReport,
    GroupGeometry,
    pair_similarities,
    report_to_csv,
    report_to_text,
    roc_points,
)
from .model import OptimizerConfig, init_model, load_checkpoint, save_checkpoint, \
    train_epochs
from .qlearning import (
    AgentConfig,
    PolicyTable,
    load_policy,
    load_qnetwork,
    load_transition_log,
    save_policy,
    save_qnetwork,
    save_transition_log,
    train_dqn,
    transitions_of,
)
from .sampler import SamplerConfig, base_loss_config, calibrate_and_collect, \
    collect_transitions

MANIFEST_FORMAT = "fairmargin-manifest v1"

# Table-style train-set identity ratios (anchor : three equal minorities),
# all summing to the same total so sweep rows are comparable.
SWEEP_RATIOS = {
    "4-2-2-2": (24, 12, 12, 12),
    "5-53-53-53": (30, 10, 10, 10),
    "6-43-43-43": (36, 8, 8, 8),
    "7-1-1-1": (42, 6, 6, 6),
}


@dataclass(frozen=True)
class DataConfig:
    n_groups: int = 4
    identities_per_group: tuple[int, ...] = (46, 32, 32, 32)
    samples_per_identity: int = 10
    d_in: int = 16
    group_concentration: tuple[float, ...] = (50.0, 12.0, 10.0, 9.0)
    group_center_spread: tuple[float, ...] = (1.1, 0.5, 0.45, 0.42)

    def __post_init__(self):
        object.__setattr__(self, "identities_per_group", tuple(self.identities_per_group))
        object.__setattr__(self, "group_concentration", tuple(self.group_concentration))
        object.__setattr__(self, "group_center_spread", tuple(self.group_center_spread))


@dataclass(frozen=True)
class SplitConfig:
    val_identities_per_group: int = 10
    test_identities_per_group: int = 8
    pairs_per_group: int = 400


@dataclass(frozen=True)
class EncoderConfig:
    hidden: tuple[int, ...] = (32,)
    feature_dim: int = 8

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass(frozen=True)
class LossSection:
    flavor: str = "soft"
    scale: float = 22.0
    anchor_group: int = 0
    margin_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.margin_grid is not None:
            object.__setattr__(self, "margin_grid", tuple(self.margin_grid))
        margin_grid_for(self.flavor)


@dataclass(frozen=True)
class OptimSection:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64


@dataclass(frozen=True)
class SamplerSection:
    warmup_epochs: int = 5
    epochs_per_action: int = 1
    sweep_repeats: int = 5
    max_states_per_group: int = 64
    n_bias_bins: int = 4


@dataclass(frozen=True)
class AgentSection:
    discount: float = 0.1
    learning_rate: float = 1e-3
    training_iterations: int = 20000
    batch_size: int = 128
    hidden: tuple[int, ...] = (8,)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass(frozen=True)
class TrainSection:
    decision_interval: int = 1
    total_epochs: int = 60
    baseline_mode: str = "fixed"


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossSection = field(default_factory=LossSection)
    optimizer: OptimSection = field(default_factory=OptimSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    agent: AgentSection = field(default_factory=AgentSection)
    train: TrainSection = field(default_factory=TrainSection)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9)
    output_dir: str = "runs/default"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        sections = {
            "data": DataConfig, "split": SplitConfig, "encoder": EncoderConfig,
            "loss": LossSection, "optimizer": OptimSection, "sampler": SamplerSection,
            "agent": AgentSection, "train": TrainSection,
        }
        kwargs = {}
        for key, value in raw.items():
            if key in sections:
                known = {f.name for f in dataclasses.fields(sections[key])}
                extra = set(value) - known
                if extra:
                    raise ConfigurationError(f"unknown keys in '{key}': {sorted(extra)}")
                kwargs[key] = sections[key](**value)
            elif key in ("seeds", "output_dir"):
                kwargs[key] = value
            else:
                raise ConfigurationError(f"unknown config section {key!r}")
        return cls(**kwargs)

    def hash(self) -> str:
        """Hash of the experiment identity (the output path does not count)."""
        payload = self.to_dict()
        payload.pop("output_dir", None)
        canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def save_config(cfg: ExperimentConfig, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``section.key=json-value`` strings onto a config."""
    raw = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        path, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        keys = path.split(".")
        for key in keys[:-1]:
            if key not in node:
                raise ConfigurationError(f"unknown config path {path!r}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigurationError(f"unknown config path {path!r}")
        node[keys[-1]] = value
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# per-seed derived seeds
# ---------------------------------------------------------------------------

def seed_of(seed, what):
    offsets = {"dataset": 11, "val_split": 13, "test_split": 17, "pairs": 19,
               "model": 23, "sampler": 29, "agent": 31}
    return 1000 * int(seed) + offsets[what]


def dataset_spec_for(cfg: ExperimentConfig, seed) -> DatasetSpec:
    d = cfg.data
    return DatasetSpec(
        n_groups=d.n_groups, identities_per_group=d.identities_per_group,
        samples_per_identity=d.samples_per_identity, d_in=d.d_in,
        group_concentration=d.group_concentration,
        group_center_spread=d.group_center_spread, seed=seed_of(seed, "dataset"),
    )


def optimizer_for(cfg: ExperimentConfig, seed) -> OptimizerConfig:
    o = cfg.optimizer
    return OptimizerConfig(learning_rate=o.learning_rate, momentum=o.momentum,
                           weight_decay=o.weight_decay, batch_size=o.batch_size,
                           seed=seed_of(seed, "model"))


def state_space_for(cfg: ExperimentConfig, bias_edges) -> StateSpace:
    grid = cfg.loss.margin_grid or margin_grid_for(cfg.loss.flavor)[0]
    step = grid[1] - grid[0] if len(grid) > 1 else 1.0
    return StateSpace(cfg.data.n_groups - 1, grid, tuple(bias_edges), step)


# ---------------------------------------------------------------------------
# stage engine
# ---------------------------------------------------------------------------

STAGES = ("dataset", "warmup", "sample", "dqn", "policy", "train", "eval")


class RunDirectory:
    """Stage bookkeeping for one run directory."""

    def __init__(self, out_dir, cfg: ExperimentConfig):
        self.root = Path(out_dir)
        self.cfg = cfg
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"
        self.manifest = self._load_manifest()

    def _load_manifest(self):
        if self.manifest_path.exists():
            with open(self.manifest_path) as fh:
                manifest = json.load(fh)
            if manifest.get("format") == MANIFEST_FORMAT:
                return manifest
        return {"format": MANIFEST_FORMAT, "config_hash": self.cfg.hash(),
                "package_version": __version__, "stages": {}}

    def _write_manifest(self):
        self.manifest["config_hash"] = self.cfg.hash()
        self.manifest["package_version"] = __version__
        with open(self.manifest_path, "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def seed_dir(self, seed) -> Path:
        path = self.root / f"seed_{seed}"
        path.mkdir(exist_ok=True)
        return path

    def stage_done(self, key, outputs) -> bool:
        entry = self.manifest["stages"].get(key)
        if entry is None or entry.get("hash") != self.cfg.hash():
            return False
        return all((self.root / rel).exists() for rel in entry["outputs"]) and \
            {str(p.relative_to(self.root)) for p in outputs} == set(entry["outputs"])

    def mark_stage(self, key, outputs):
        self.manifest["stages"][key] = {
            "hash": self.cfg.hash(),
            "outputs": sorted(str(p.relative_to(self.root)) for p in outputs),
        }
        self._write_manifest()


def _geometry_from_dict(raw):
    return GroupGeometry(**raw)


def report_to_json_dict(report: BiasReport):
    return {
        "per_group_accuracy": list(report.per_group_accuracy),
        "avg_accuracy": report.avg_accuracy,
        "std": report.std,
        "ser": None if math.isinf(report.ser) else report.ser,
        "geometry": [dataclasses.asdict(g) for g in report.per_group_geometry],
    }


def report_from_json_dict(raw) -> BiasReport:
    ser = raw["ser"] if raw["ser"] is not None else math.inf
    return BiasReport(tuple(raw["per_group_accuracy"]), raw["avg_accuracy"],
                      raw["std"], ser,
                      tuple(_geometry_from_dict(g) for g in raw["geometry"]))


def save_report(report: BiasReport, stem: Path):
    with open(stem.with_suffix(".json"), "w") as fh:
        json.dump(report_to_json_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    stem.with_suffix(".csv").write_text(report_to_csv(report))
    stem.with_suffix(".txt").write_text(report_to_text(report))


def load_report(stem: Path) -> BiasReport:
    with open(stem.with_suffix(".json")) as fh:
        return report_from_json_dict(json.load(fh))


# ---------------------------------------------------------------------------
# individual stages (also driven by the CLI)
# ---------------------------------------------------------------------------

def stage_dataset(cfg, seed, seed_dir):
    full = generate_synthetic(dataset_spec_for(cfg, seed))
    rest, val = split_train_val(full, cfg.split.val_identities_per_group,
                                seed_of(seed, "val_split"))
    train, test = split_train_val(rest, cfg.split.test_identities_per_group,
                                  seed_of(seed, "test_split"))
    pair_rows = make_verification_pair_indices(test, cfg.split.pairs_per_group,
                                               seed_of(seed, "pairs"))
    save_dataset(full, seed_dir / "dataset.txt")
    save_dataset(train, seed_dir / "train.txt")
    save_dataset(val, seed_dir / "val.txt")
    save_dataset(test, seed_dir / "test.txt")
    save_pair_indices(pair_rows, seed_dir / "pairs.txt")
    return [seed_dir / name for name in
            ("dataset.txt", "train.txt", "val.txt", "test.txt", "pairs.txt")]


def stage_warmup(cfg, seed, seed_dir):
    train = load_dataset(seed_dir / "train.txt")
    opt = optimizer_for(cfg, seed)
    model = init_model(cfg.data.d_in, cfg.encoder.hidden, cfg.encoder.feature_dim,
                       train.n_identities, seed_of(seed, "model"))
    loss_cfg = base_loss_config(cfg.loss.flavor, cfg.data.n_groups,
                                cfg.loss.anchor_group, cfg.loss.scale)
    _, losses = train_epochs(model, train, loss_cfg, opt, cfg.sampler.warmup_epochs)
    save_checkpoint(model, seed_dir / "warmup.ckpt")
    with open(seed_dir / "warmup.json", "w") as fh:
        json.dump({"epoch_losses": losses}, fh, indent=2)
        fh.write("\n")
    return [seed_dir / "warmup.ckpt", seed_dir / "warmup.json"]


def stage_sample(cfg, seed, seed_dir):
    train = load_dataset(seed_dir / "train.txt")
    val = load_dataset(seed_dir / "val.txt")
    warm = load_checkpoint(seed_dir / "warmup.ckpt")
    opt = optimizer_for(cfg, seed)
    scfg = SamplerConfig(loss_flavor=cfg.loss.flavor,
                         epochs_per_action=cfg.sampler.epochs_per_action,
                         max_states_per_group=cfg.sampler.max_states_per_group,
                         anchor_group=cfg.loss.anchor_group, scale=cfg.loss.scale,
                         seed=seed_of(seed, "sampler"))
    run0 = calibrate_and_collect(train, val, warm, scfg, opt,
                                 n_bias_bins=cfg.sampler.n_bias_bins,
                                 margin_grid_override=cfg.loss.margin_grid)
    outputs = []
    save_transition_log(run0.records, seed_dir / "transitions.log")
    outputs.append(seed_dir / "transitions.log")
    truncated = [run0.truncated]
    counts = [len(run0.records)]
    for rep in range(1, cfg.sampler.sweep_repeats):
        opt_rep = dataclasses.replace(opt, seed=opt.seed + 7919 * rep)
        run = collect_transitions(train, val, warm, run0.space, scfg, opt_rep)
        path = seed_dir / f"transitions_rep{rep}.log"
        save_transition_log(run.records, path)
        outputs.append(path)
        truncated.append(run.truncated)
        counts.append(len(run.records))
    with open(seed_dir / "space.json", "w") as fh:
        json.dump({"n_groups_nonanchor": run0.space.n_groups_nonanchor,
                   "margin_grid": list(run0.space.margin_grid),
                   "bias_edges": list(run0.space.bias_edges),
                   "step": run0.space.step}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(seed_dir / "space.json")
    with open(seed_dir / "sample.json", "w") as fh:
        json.dump({"transition_counts": counts, "truncated": truncated,
                   "sweep_repeats": cfg.sampler.sweep_repeats}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    outputs.append(seed_dir / "sample.json")
    return outputs


def load_space(path) -> StateSpace:
    with open(path) as fh:
        raw = json.load(fh)
    return StateSpace(raw["n_groups_nonanchor"], tuple(raw["margin_grid"]),
                      tuple(raw["bias_edges"]), raw["step"])


def _all_transition_logs(seed_dir):
    paths = [seed_dir / "transitions.log"]
    rep = 1
    while (seed_dir / f"transitions_rep{rep}.log").exists():
        paths.append(seed_dir / f"transitions_rep{rep}.log")
        rep += 1
    return paths


def stage_dqn(cfg, seed, seed_dir):
    space = load_space(seed_dir / "space.json")
    records = []
    for path in _all_transition_logs(seed_dir):
        records.extend(load_transition_log(path))
    agent_cfg = AgentConfig(discount=cfg.agent.discount,
                            learning_rate=cfg.agent.learning_rate,
                            training_iterations=cfg.agent.training_iterations,
                            batch_size=cfg.agent.batch_size, hidden=cfg.agent.hidden,
                            seed=seed_of(seed, "agent"))
    net = train_dqn(transitions_of(records), space, agent_cfg)
    save_qnetwork(net, seed_dir / "qnet.ckpt")
    return [seed_dir / "qnet.ckpt"]


def stage_policy(cfg, seed, seed_dir):
    space = load_space(seed_dir / "space.json")
    net = load_qnetwork(seed_dir / "qnet.ckpt")
    policy = PolicyTable.from_network(net, space)
    save_policy(policy, seed_dir / "policy.txt")
    return [seed_dir / "policy.txt"]


def _train_section_config(cfg, baseline_mode):
    return AdaptiveTrainConfig(loss_flavor=cfg.loss.flavor,
                               decision_interval=cfg.train.decision_interval,
                               total_epochs=cfg.train.total_epochs,
                               anchor_group=cfg.loss.anchor_group,
                               scale=cfg.loss.scale, baseline_mode=baseline_mode)


def stage_train(cfg, seed, seed_dir):
    train = load_dataset(seed_dir / "train.txt")
    val = load_dataset(seed_dir / "val.txt")
    policy = load_policy(seed_dir / "policy.txt")
    opt = optimizer_for(cfg, seed)
    adaptive_model, history = train_adaptive(
        train, val, policy.space, policy,
        _train_section_config(cfg, BaselineMode.NONE), opt)
    save_checkpoint(adaptive_model, seed_dir / "adaptive.ckpt")
    save_margin_history(history, seed_dir / "margin_history.txt")
    baseline_mode = BaselineMode(cfg.train.baseline_mode)
    baseline_model = train_baseline(
        train, _train_section_config(cfg, baseline_mode), opt)
    save_checkpoint(baseline_model, seed_dir / "baseline.ckpt")
    return [seed_dir / "adaptive.ckpt", seed_dir / "margin_history.txt",
            seed_dir / "baseline.ckpt"]


def stage_eval(cfg, seed, seed_dir):
    test = load_dataset(seed_dir / "test.txt")
    val = load_dataset(seed_dir / "val.txt")
    pairs = pairs_from_indices(test, load_pair_indices(seed_dir / "pairs.txt"))
    outputs = []
    for arm, ckpt in (("adaptive", "adaptive.ckpt"), ("baseline", "baseline.ckpt")):
        model = load_checkpoint(seed_dir / ckpt)
        report = evaluate(model, pairs, geometry_ds=val)
        save_report(report, seed_dir / f"report_{arm}")
        outputs += [seed_dir / f"report_{arm}{ext}" for ext in (".json", ".csv", ".txt")]
        sims = pair_similarities(model, pairs)
        labels = np.asarray([p.same_identity for p in pairs])
        groups = np.asarray([p.group_id for p in pairs])
        for g in sorted(set(groups.tolist())):
            mask = groups == g
            rows = roc_points(sims[mask], labels[mask])
            path = seed_dir / f"roc_{arm}_group{g}.csv"
            with open(path, "w") as fh:
                fh.write("threshold,fpr,tpr\n")
                for thr, fpr, tpr in rows:
                    fh.write(f"{repr(thr)},{repr(fpr)},{repr(tpr)}\n")
            outputs.append(path)
    return outputs


STAGE_FUNCS = {
    "dataset": stage_dataset,
    "warmup": stage_warmup,
    "sample": stage_sample,
    "dqn": stage_dqn,
    "policy": stage_policy,
    "train": stage_train,
    "eval": stage_eval,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, force=False):
    """Execute the full pipeline for every seed; reuse completed stages.

    Returns the aggregate summary dict (also persisted as report files).
    """
    out_dir = Path(out_dir or cfg.output_dir)
    run = RunDirectory(out_dir, cfg)
    save_config(cfg, out_dir / "config.json")
    anything_ran = False
    for seed in cfg.seeds:
        seed_dir = run.seed_dir(seed)
        downstream_dirty = force
        for stage in STAGES:
            key = f"seed{seed}:{stage}"
            entry = run.manifest["stages"].get(key)
            done = (entry is not None and entry.get("hash") == cfg.hash()
                    and all((run.root / rel).exists() for rel in entry["outputs"]))
            if done and not downstream_dirty:
                continue
            outputs = STAGE_FUNCS[stage](cfg, seed, seed_dir)
            run.mark_stage(key, outputs)
            downstream_dirty = True
            anything_ran = True
    report_path = out_dir / "report.csv"
    if anything_ran or not report_path.exists():
        summary = aggregate_report(cfg, out_dir)
    else:
        with open(out_dir / "report.json") as fh:
            summary = json.load(fh)
    return summary


def aggregate_report(cfg: ExperimentConfig, out_dir):
    """Collect per-seed reports into the run-level tables."""
    out_dir = Path(out_dir)
    rows = []
    for seed in cfg.seeds:
        seed_dir = out_dir / f"seed_{seed}"
        for arm in ("baseline", "adaptive"):
            report = load_report(seed_dir / f"report_{arm}")
            rows.append({"seed": seed, "arm": arm,
                         "accuracy": list(report.per_group_accuracy),
                         "avg": report.avg_accuracy, "std": report.std,
                         "ser": None if math.isinf(report.ser) else report.ser})
    by_arm = {"baseline": [], "adaptive": []}
    for row in rows:
        by_arm[row["arm"]].append(row)
    std_wins = sum(a["std"] < b["std"] for a, b in
                   zip(by_arm["adaptive"], by_arm["baseline"]))
    ser_rows = [(a["ser"], b["ser"]) for a, b in
                zip(by_arm["adaptive"], by_arm["baseline"])
                if a["ser"] is not None and b["ser"] is not None]
    ser_wins = sum(a < b for a, b in ser_rows)
    mean_ser = {arm: (float(np.mean([r["ser"] for r in by_arm[arm]
                                     if r["ser"] is not None]))
                      if any(r["ser"] is not None for r in by_arm[arm]) else None)
                for arm in by_arm}
    summary = {
        "config_hash": cfg.hash(),
        "seeds": list(cfg.seeds),
        "rows": rows,
        "std_wins": int(std_wins),
        "ser_wins": int(ser_wins),
        "comparable_seeds": len(by_arm["adaptive"]),
        "mean_std": {arm: float(np.mean([r["std"] for r in by_arm[arm]]))
                     for arm in by_arm},
        "mean_ser": mean_ser,
        "ser_reduction": (1.0 - mean_ser["adaptive"] / mean_ser["baseline"]
                          if mean_ser["baseline"] else None),
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    n_groups = cfg.data.n_groups
    names = [f"group{g}" for g in range(n_groups)]
    lines = ["seed,arm," + ",".join(names) + ",Avg,STD,SER"]
    for row in rows:
        accs = [f"{100.0 * a:.2f}" for a in row["accuracy"]]
        ser = "inf" if row["ser"] is None else f"{row['ser']:.2f}"
        lines.append(f"{row['seed']},{row['arm']}," + ",".join(accs)
                     + f",{100.0 * row['avg']:.2f},{row['std']:.2f},{ser}")
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n")

    text = ["arm means:"]
    for arm in ("baseline", "adaptive"):
        ser = summary["mean_ser"][arm]
        ser_text = "inf" if ser is None else f"{ser:.2f}"
        text.append(f"  {arm}: STD {summary['mean_std'][arm]:.2f}  SER {ser_text}")
    text.append(f"adaptive wins: STD {std_wins}/{len(by_arm['adaptive'])}, "
                f"SER {ser_wins}/{len(ser_rows)}")
    if summary["ser_reduction"] is not None:
        text.append(f"mean SER reduction: {100.0 * summary['ser_reduction']:.1f}%")
    (out_dir / "report.txt").write_text("\n".join(text) + "\n")
    return summary


def sweep(cfg: ExperimentConfig, out_dir, ratios=None, force=False):
    """Run the experiment across train-set identity ratios.

    Each ratio keeps the configured validation/test holdout per group and
    adjusts the generated identity counts so the *training* ratio matches.
    """
    out_dir = Path(out_dir)
    ratios = dict(ratios) if ratios else dict(SWEEP_RATIOS)
    held_out = cfg.split.val_identities_per_group + cfg.split.test_identities_per_group
    results = {}
    for tag, train_counts in ratios.items():
        raw = cfg.to_dict()
        raw["data"]["identities_per_group"] = [c + held_out for c in train_counts]
        sub_cfg = ExperimentConfig.from_dict(raw)
        results[tag] = run_experiment(sub_cfg, out_dir / f"ratio_{tag}", force=force)
    lines = ["ratio,arm,mean_STD,mean_SER,std_wins,ser_wins"]
    for tag, summary in results.items():
        for arm in ("baseline", "adaptive"):
            ser = summary["mean_ser"][arm]
            ser_text = "inf" if ser is None else f"{ser:.2f}"
            lines.append(f"{tag},{arm},{summary['mean_std'][arm]:.2f},{ser_text},"
                         f"{summary['std_wins']},{summary['ser_wins']}")
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    return results
