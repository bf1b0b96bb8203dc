"""
Command-line entry point.

    python main.py train      --config data/config.json --out runs/lexicase
    python main.py compare    --config data/config.json --out runs/compare
    python main.py sweep-pop  --config data/config.json --sizes 2 4 6 8
    python main.py sweep-momentum --config data/config.json --policies none reset inherit
    python main.py profile    --checkpoint runs/a/checkpoint.lxgd --checkpoint runs/b/checkpoint.lxgd
    python main.py eval       --checkpoint runs/lexicase/checkpoint.lxgd

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from src.core.config import Config, RunConfig, Strategy, parse_override
from src.core.errors import ConfigError, LexgradError
from src.core.evolution import CHECKPOINT_FILE, run_training
from src.components.analysis import (
    activation_profile, compare_profiles, evaluate, write_profile_csv, write_profile_json,
)
from src.components.checkpoint import file_digest, load_checkpoint
from src.components.loaders import load_splits
from src.components.network import last_spatial_layer
from src.components.optim import MomentumPolicy
from src.utils.logs import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
CONFIG_ECHO = "config.json"

# flag name -> config key
FLAG_KEYS = {
    "seed": "seed",
    "workers": "workers",
    "strategy": "strategy",
    "population": "population",
    "momentum_policy": "momentum_policy",
    "selection_mode": "selection_mode",
    "generations": "generations",
    "log_level": "log_level",
}


@dataclass(frozen=True)
class ExperimentSpec:
    config: RunConfig
    out_dir: str
    seeds: tuple

    def echo(self):
        """Write the resolved config next to the results"""
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, CONFIG_ECHO)
        with open(path, "w") as f:
            json.dump(self.config.to_dict(), f, indent=2, sort_keys=True)
        return path

    @classmethod
    def from_echo(cls, path, out_dir=None):
        with open(path, "r") as f:
            config = RunConfig.from_dict(json.load(f))
        return cls(config, out_dir or os.path.dirname(path), config.seeds)


def build_spec(args):
    overrides = {}
    for text in args.set or []:
        key, value = parse_override(text)
        overrides[key] = value
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    config = RunConfig.from_config(Config(args.config, values=overrides))
    return ExperimentSpec(config, args.out, config.seeds)


def _train_one(cfg, out_dir, resume=None):
    """Train, then score on the test split (the training split when there is none)"""
    train, test = load_splits(cfg)
    model, records = run_training(cfg, train, out_dir, resume_from=resume)
    report = evaluate(model, test if test is not None else train,
                      split="test" if test is not None else "train")
    with open(os.path.join(out_dir, "eval.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    return report, records


def cmd_train(spec, resume=None):
    cfg = spec.config
    spec.echo()
    report, records = _train_one(cfg, spec.out_dir, resume)
    checkpoint = os.path.join(spec.out_dir, CHECKPOINT_FILE)
    print(f"{report.split} accuracy: {report.accuracy:.4f} ({report.correct}/{report.count})")
    print(f"generations: {len(records)}")
    print(f"checkpoint: {checkpoint} sha256={file_digest(checkpoint)}")
    return EXIT_OK


def summarize_runs(label, accuracies):
    """Mean and sample standard deviation (0 with a warning for a single run)"""
    values = np.asarray(accuracies, dtype=np.float64)
    if len(values) < 2:
        logger.warning("%s: only %d run, standard deviation reported as 0", label, len(values))
        std = 0.0
    else:
        std = float(values.std(ddof=1))
    return {"label": label, "runs": len(values), "mean_accuracy": float(values.mean()),
            "std_accuracy": std, "accuracies": [float(v) for v in values]}


def write_summary(rows, out_dir, name="summary"):
    csv_path = os.path.join(out_dir, f"{name}.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label", "runs", "mean_accuracy", "std_accuracy"])
        for row in rows:
            writer.writerow([row["label"], row["runs"], repr(row["mean_accuracy"]), repr(row["std_accuracy"])])
    lines = [f"{'':<16}{'acc.':>10}{'std':>10}{'runs':>6}"]
    for row in rows:
        lines.append(f"{row['label']:<16}{100 * row['mean_accuracy']:>10.2f}"
                     f"{100 * row['std_accuracy']:>10.2f}{row['runs']:>6}")
    table = "\n".join(lines)
    with open(os.path.join(out_dir, f"{name}.txt"), "w") as f:
        f.write(table + "\n")
    print(table)
    return csv_path


def _replicates(cfg, label, out_dir, seeds):
    accuracies = []
    for seed in seeds:
        run_cfg = cfg.replace(seed=seed)
        run_dir = os.path.join(out_dir, label, f"seed-{seed}")
        os.makedirs(run_dir, exist_ok=True)
        report, _ = _train_one(run_cfg, run_dir)
        logger.info("%s seed %d: accuracy %.4f", label, seed, report.accuracy)
        accuracies.append(report.accuracy)
    return summarize_runs(label, accuracies)


def cmd_compare(spec):
    """Every configured strategy under every replicate seed"""
    spec.echo()
    rows = []
    for name in spec.config.strategies:
        cfg = spec.config.replace(strategy=name)
        rows.append(_replicates(cfg, name, spec.out_dir, spec.seeds))
    write_summary(rows, spec.out_dir)
    return EXIT_OK


def cmd_sweep_population(spec, sizes=None):
    """One comparison row per population size"""
    cfg = spec.config
    if cfg.strategy is Strategy.SGD_BASELINE:
        raise ConfigError("a population sweep needs a population strategy, not sgd-baseline", key="strategy")
    sizes = tuple(sizes or cfg.sizes)
    if any(size < 1 for size in sizes):
        raise ConfigError(f"population sizes must be >= 1, got {list(sizes)}", key="sizes")
    spec.echo()
    rows = []
    for size in sizes:
        rows.append(_replicates(cfg.replace(population=size), f"p={size}", spec.out_dir, spec.seeds))
    write_summary(rows, spec.out_dir, name="sweep")
    return EXIT_OK


def cmd_sweep_momentum(spec, policies=None):
    """One comparison row per momentum policy, same strategy and population"""
    cfg = spec.config
    policies = tuple(policies or cfg.momentum_policies)
    spec.echo()
    rows = []
    for policy in policies:
        rows.append(_replicates(cfg.replace(momentum_policy=policy), policy, spec.out_dir, spec.seeds))
    write_summary(rows, spec.out_dir, name="momentum")
    return EXIT_OK


def _profile_images(cfg, samples):
    train, test = load_splits(cfg)
    split = test if test is not None else train
    count = min(samples, len(split))
    return split.normalized(np.arange(count))


def cmd_profile(spec, checkpoints, layer=None, samples=None, bins=None):
    cfg = spec.config
    samples = samples or cfg.profile_samples
    bins = bins or cfg.profile_bins
    os.makedirs(spec.out_dir, exist_ok=True)
    images = _profile_images(cfg, samples)
    profiles = []
    for index, path in enumerate(checkpoints):
        model = load_checkpoint(path).model
        layer_index = layer if layer is not None else cfg.profile_layer
        if layer_index is None:
            layer_index = last_spatial_layer(model)
        profile = activation_profile(model, layer_index, images, bins)
        stem = os.path.join(spec.out_dir, f"profile-{index}")
        write_profile_csv(profile, stem + ".csv")
        write_profile_json(profile, stem + ".json", extra={"checkpoint": path})
        profiles.append(profile)
        print(f"{path}: layer {profile.layer}, {profile.samples} samples x {profile.channels} channels")
    if len(profiles) == 2:
        comparison = compare_profiles(*profiles)
        with open(os.path.join(spec.out_dir, "comparison.json"), "w") as f:
            json.dump(comparison.to_dict(), f, indent=2)
        print(f"normalized entropy {comparison.a.normalized_entropy:.4f} vs "
              f"{comparison.b.normalized_entropy:.4f}, zero fraction "
              f"{comparison.a.zero_fraction:.4f} vs {comparison.b.zero_fraction:.4f}")
    return EXIT_OK


def cmd_eval(spec, checkpoint):
    model = load_checkpoint(checkpoint).model
    train, test = load_splits(spec.config)
    os.makedirs(spec.out_dir, exist_ok=True)
    reports = [evaluate(model, train, split="train")]
    if test is not None:
        reports.append(evaluate(model, test, split="test"))
    with open(os.path.join(spec.out_dir, "eval.json"), "w") as f:
        json.dump([report.to_dict() for report in reports], f, indent=2)
    for report in reports:
        print(f"{report.split} accuracy: {report.accuracy:.4f} ({report.correct}/{report.count})")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat JSON run config")
    common.add_argument("--out", default="runs/latest", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--strategy", choices=[s.value for s in Strategy])
    common.add_argument("--population", type=int)
    common.add_argument("--momentum-policy", dest="momentum_policy", choices=[p.value for p in MomentumPolicy])
    common.add_argument("--selection-mode", dest="selection_mode", choices=["modified", "original"])
    common.add_argument("--generations", type=int)
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("--log-level", dest="log_level")

    parser = argparse.ArgumentParser(prog="lexgrad", description="Gradient lexicase selection experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", parents=[common], help="run one training")
    train.add_argument("--resume", help="checkpoint to continue from")
    commands.add_parser("compare", parents=[common], help="strategies x seeds summary table")
    sweep = commands.add_parser("sweep-pop", parents=[common], help="population size sweep")
    sweep.add_argument("--sizes", type=int, nargs="+")
    momentum = commands.add_parser("sweep-momentum", parents=[common], help="momentum policy comparison")
    momentum.add_argument("--policies", nargs="+", choices=[p.value for p in MomentumPolicy])
    profile = commands.add_parser("profile", parents=[common], help="activation diversity profile")
    profile.add_argument("--checkpoint", action="append", required=True)
    profile.add_argument("--layer", type=int)
    profile.add_argument("--samples", type=int)
    profile.add_argument("--bins", type=int)
    evaluate_cmd = commands.add_parser("eval", parents=[common], help="accuracy of a checkpoint")
    evaluate_cmd.add_argument("--checkpoint", required=True)
    return parser


def dispatch(args):
    spec = build_spec(args)
    configure_logging(spec.config.log_level)
    if args.command == "train":
        return cmd_train(spec, resume=args.resume)
    if args.command == "compare":
        return cmd_compare(spec)
    if args.command == "sweep-pop":
        return cmd_sweep_population(spec, args.sizes)
    if args.command == "sweep-momentum":
        return cmd_sweep_momentum(spec, args.policies)
    if args.command == "profile":
        if len(args.checkpoint) > 2:
            raise ConfigError("profile takes one or two checkpoints", key="checkpoint")
        return cmd_profile(spec, args.checkpoint, args.layer, args.samples, args.bins)
    return cmd_eval(spec, args.checkpoint)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (LexgradError, OSError) as e:
        logger.error("Run failed: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
