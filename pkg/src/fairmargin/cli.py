"""Command-line front end.

Every command reads an optional JSON config file plus ``--set`` dotted
overrides, and operates inside a run directory laid out exactly like
``run`` produces, so the full pipeline can also be driven stage by
stage.  Failures exit nonzero with a machine-readable error record on
stderr.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import harness
from .errors import ConfigurationError


def _load_cfg(config, overrides, out=None):
    cfg = harness.load_config(config) if config else harness.default_config()
    cfg = harness.apply_overrides(cfg, overrides)
    if out is not None:
        cfg = harness.apply_overrides(cfg, [f"output_dir={out}"])
    return cfg


def _fail(exc):
    record = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    click.echo(json.dumps(record), err=True)
    sys.exit(1)


def cli_command(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigurationError, FileNotFoundError, ValueError, RuntimeError) as exc:
            _fail(exc)
    return wrapper


config_option = click.option("--config", type=click.Path(exists=True, dir_okay=False),
                             default=None, help="JSON experiment config.")
set_option = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                          help="Override a config entry (dotted path, JSON value).")
out_option = click.option("--out", type=click.Path(file_okay=False), default="runs/run",
                          show_default=True, help="Run directory.")
seed_option = click.option("--seed", type=int, default=0, show_default=True,
                           help="Experiment seed this stage operates on.")


def _stage(cfg, seed, out, stage_name):
    run = harness.RunDirectory(Path(out), cfg)
    seed_dir = run.seed_dir(seed)
    outputs = harness.STAGE_FUNCS[stage_name](cfg, seed, seed_dir)
    run.mark_stage(f"seed{seed}:{stage_name}", outputs)
    for path in outputs:
        click.echo(str(path))


@click.group()
@click.version_option()
def main():
    """Group-balanced margin training with a learned margin controller."""


def stage_command(name, stage_name, help_text):
    @main.command(name=name, help=help_text)
    @config_option
    @set_option
    @out_option
    @seed_option
    @cli_command
    def _cmd(config, overrides, out, seed, _stage_name=stage_name):
        cfg = _load_cfg(config, overrides, out)
        _stage(cfg, seed, out, _stage_name)
    return _cmd


stage_command("gen-data", "dataset",
              "Generate the dataset, splits and verification pairs for one seed.")
stage_command("warmup", "warmup", "Train the warmup model on the train split.")
stage_command("sample", "sample",
              "Collect offline margin transitions from the warmup model.")
stage_command("train-dqn", "dqn", "Fit the Q-network on the collected transitions.")
stage_command("dump-policy", "policy",
              "Dump the greedy policy table from the trained Q-network.")
stage_command("train", "train",
              "Train the controller-guided model and the baseline.")
stage_command("evaluate", "eval", "Score both models into fairness reports.")


@main.command("split", help="Re-derive train/val/test splits from dataset.txt.")
@config_option
@set_option
@out_option
@seed_option
@cli_command
def split_cmd(config, overrides, out, seed):
    # gen-data already writes the splits; this recomputes them from the
    # persisted full dataset (useful after editing split sizes).
    cfg = _load_cfg(config, overrides, out)
    seed_dir = Path(out) / f"seed_{seed}"
    full = harness.load_dataset(seed_dir / "dataset.txt")
    rest, val = harness.split_train_val(full, cfg.split.val_identities_per_group,
                                        harness.seed_of(seed, "val_split"))
    train, test = harness.split_train_val(rest, cfg.split.test_identities_per_group,
                                          harness.seed_of(seed, "test_split"))
    for name, ds in (("train.txt", train), ("val.txt", val), ("test.txt", test)):
        harness.save_dataset(ds, seed_dir / name)
        click.echo(str(seed_dir / name))


@main.command("pairs", help="Re-derive verification pairs from test.txt.")
@config_option
@set_option
@out_option
@seed_option
@cli_command
def pairs_cmd(config, overrides, out, seed):
    cfg = _load_cfg(config, overrides, out)
    seed_dir = Path(out) / f"seed_{seed}"
    test = harness.load_dataset(seed_dir / "test.txt")
    rows = harness.make_verification_pair_indices(
        test, cfg.split.pairs_per_group, harness.seed_of(seed, "pairs"))
    harness.save_pair_indices(rows, seed_dir / "pairs.txt")
    click.echo(str(seed_dir / "pairs.txt"))


@main.command("run", help="Run the full pipeline for every configured seed.")
@config_option
@set_option
@out_option
@click.option("--force", is_flag=True, help="Recompute even completed stages.")
@cli_command
def run_cmd(config, overrides, out, force):
    cfg = _load_cfg(config, overrides, out)
    summary = harness.run_experiment(cfg, out, force=force)
    click.echo((Path(out) / "report.txt").read_text().rstrip())


@main.command("report", help="Rebuild the aggregate report from per-seed reports.")
@config_option
@set_option
@out_option
@cli_command
def report_cmd(config, overrides, out):
    cfg = _load_cfg(config, overrides, out)
    harness.aggregate_report(cfg, out)
    click.echo((Path(out) / "report.txt").read_text().rstrip())


@main.command("sweep", help="Run the four train-ratio experiments.")
@config_option
@set_option
@out_option
@click.option("--force", is_flag=True, help="Recompute even completed stages.")
@cli_command
def sweep_cmd(config, overrides, out, force):
    cfg = _load_cfg(config, overrides, out)
    harness.sweep(cfg, out, force=force)
    click.echo((Path(out) / "sweep.csv").read_text().rstrip())


@main.command("selftest", help="Run the built-in oracle checks.")
@cli_command
def selftest_cmd():
    from .selftest import run_selftest
    if not run_selftest(emit=click.echo):
        sys.exit(1)


@main.command("bench", help="Benchmark the training-step backends.")
@click.option("--steps", type=int, default=400, show_default=True)
@cli_command
def bench_cmd(steps):
    from .bench import run_benchmark
    run_benchmark(emit=click.echo, steps=steps)


@main.command("init-config", help="Write the default config to a file.")
@click.argument("path", type=click.Path(dir_okay=False))
@cli_command
def init_config_cmd(path):
    harness.save_config(harness.default_config(), path)
    click.echo(path)


if __name__ == "__main__":
    main()
