"""Command-line front end: run, compare, toy.

Configs are INI files with one section per module area. Values can be
overridden on the command line with --set section.key=value (the section
prefix is optional when the key is unambiguous). The output root is taken
from --out, else the DFLSIM_OUT environment variable, else the config.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import statistics
import sys

import numpy as np

from . import data as data_mod
from . import engine
from .core import (ConfigError, DataFormatError, DivergedError, ExperimentConfig,
                   PartitionError, substream, topology_from_edges)
from .model import ModelShape

OUT_ENV_VAR = "DFLSIM_OUT"


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def _to_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text}")


def _opt(conv):
    def parse(text: str):
        if text.strip().lower() in ("", "none", "null"):
            return None
        return conv(text)
    return parse


_SCHEMA: dict[str, dict[str, object]] = {
    "experiment": {"m": int, "rounds": int, "seed": int, "algorithm": str,
                   "out_dir": str},
    "data": {"dataset": str, "partition": str, "num_classes": int, "d_in": int,
             "n_per_client": int, "class_scale": float, "sep": float,
             "cluster_mode": str, "feature_noise": float, "min_per_client": int,
             "test_frac": float},
    "model": {"d_hidden": int, "k_w": int, "k_beta": int, "eta_w": float,
              "eta_beta": float, "momentum": float, "batch_size": int,
              "eval_batch": int},
    "collaboration": {"tau": float, "upsilon": float,
                      "theta_override": _opt(float)},
    "aggregation": {"gamma": float, "t_agg": float, "loss_ema": _to_bool},
    "engine": {"topology": str, "share_once": _to_bool, "max_coreset": _opt(int),
               "noise_sigma2": _opt(float), "noise_clip": float,
               "noise_batch": _opt(int)},
}

_REQUIRED = [("experiment", "rounds"), ("experiment", "m")]

_FIELD_SECTION = {key: section for section, keys in _SCHEMA.items() for key in keys}


def load_config(path: str, overrides: list[str] | None = None) -> ExperimentConfig:
    """Parse an INI config file and apply --set overrides on top."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError("config", f"cannot read '{path}'")
    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(section, "unknown config section")
        for key, raw in parser.items(section):
            conv = _SCHEMA[section].get(key)
            if conv is None:
                raise ConfigError(f"{section}.{key}", "unknown config key")
            try:
                values[key] = conv(raw)
            except ValueError as e:
                raise ConfigError(f"{section}.{key}", f"bad value '{raw}': {e}") from None
    for section, key in _REQUIRED:
        if key not in values:
            raise ConfigError(f"{section}.{key}", "missing required key")
    for item in overrides or []:
        key, value = _parse_set(item)
        values[key] = value
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def _parse_set(item: str):
    if "=" not in item:
        raise ConfigError("set", f"override '{item}' is not key=value")
    key, _, raw = item.partition("=")
    key = key.strip()
    if "." in key:
        section, _, name = key.partition(".")
        if section not in _SCHEMA or name not in _SCHEMA[section]:
            raise ConfigError(key, "unknown config key")
    else:
        name = key
        if name not in _FIELD_SECTION:
            raise ConfigError(key, "unknown config key")
        section = _FIELD_SECTION[name]
    try:
        return name, _SCHEMA[section][name](raw.strip())
    except ValueError as e:
        raise ConfigError(f"{section}.{name}", f"bad value '{raw}': {e}") from None


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip() != ""]


def resolve_out_dir(cfg: ExperimentConfig, cli_out: str | None) -> str:
    if cli_out:
        return cli_out
    env = os.environ.get(OUT_ENV_VAR, "").strip()
    if env:
        return env
    return cfg.out_dir


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _summarize(results) -> dict:
    per_seed = []
    for res in results:
        per_seed.append({
            "seed": res.config.seed,
            "run_id": res.config.run_id(),
            "best_acc": res.best_mean_acc(),
            "final_acc": res.final_mean_acc(),
        })
    best = [e["best_acc"] for e in per_seed]
    final = [e["final_acc"] for e in per_seed]
    return {
        "seeds": per_seed,
        "best_acc_mean": statistics.fmean(best),
        "best_acc_std": statistics.pstdev(best) if len(best) > 1 else 0.0,
        "final_acc_mean": statistics.fmean(final),
        "final_acc_std": statistics.pstdev(final) if len(final) > 1 else 0.0,
    }


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set or [])
    seeds = _parse_int_list(args.seed) if args.seed else [cfg.seed]
    out_root = resolve_out_dir(cfg, args.out)
    run_dir = os.path.join(out_root, f"run_{cfg.with_overrides(seed=seeds[0]).run_id()}")
    os.makedirs(run_dir, exist_ok=True)
    results = []
    for seed in seeds:
        res = engine.run_training(cfg.with_overrides(seed=seed))
        results.append(res)
        engine.write_metrics_csv(os.path.join(run_dir, f"metrics_seed{seed}.csv"),
                                 res.metrics)
        engine.write_audit_csv(os.path.join(run_dir, f"audit_seed{seed}.csv"),
                               res.plans)
    summary = {
        "config": {k: v for k, v in cfg.as_flat_dict().items()},
        "algorithm": cfg.algorithm,
    }
    summary.update(_summarize(results))
    with open(os.path.join(run_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, default=str)
    print(f"wrote {run_dir}: best_acc_mean={summary['best_acc_mean']:.4f} "
          f"final_acc_mean={summary['final_acc_mean']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def cmd_compare(args) -> int:
    cfg = load_config(args.config, args.set or [])
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    if not algos:
        raise ConfigError("algos", "no algorithms given")
    for a in algos:
        engine.parse_algorithm(a)
    seeds = _parse_int_list(args.seeds)
    if not seeds:
        raise ConfigError("seeds", "no seeds given")
    out_root = resolve_out_dir(cfg, args.out)
    os.makedirs(out_root, exist_ok=True)
    table = []
    for algo in algos:
        results = [engine.run_training(cfg.with_overrides(algorithm=algo, seed=s))
                   for s in seeds]
        best = [r.best_mean_acc() for r in results]
        final = [r.final_mean_acc() for r in results]
        table.append({
            "algorithm": algo,
            "best_mean": statistics.fmean(best),
            "best_std": statistics.pstdev(best) if len(best) > 1 else 0.0,
            "final_mean": statistics.fmean(final),
            "final_std": statistics.pstdev(final) if len(final) > 1 else 0.0,
        })
    path = os.path.join(out_root, "compare.csv")
    with open(path, "w", newline="") as fh:
        fh.write("algorithm,best_mean,best_std,final_mean,final_std\n")
        for row in table:
            fh.write(f"{row['algorithm']},{row['best_mean']!r},{row['best_std']!r},"
                     f"{row['final_mean']!r},{row['final_std']!r}\n")
    width = max(len(r["algorithm"]) for r in table)
    print(f"{'algorithm'.ljust(width)}  best acc (mean +/- std over {len(seeds)} seeds)")
    for row in table:
        print(f"{row['algorithm'].ljust(width)}  {row['best_mean']:.4f} +/- {row['best_std']:.4f}")
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# toy
# ---------------------------------------------------------------------------
# Three clients, eight classes. Clients 1 and 2 hold classes {4..7}, client 3
# holds {0..3}. Cooperation sets are enforced through the topology; partners
# always collaborate (gossip over the whole neighborhood, uniform weights).

TOY_NUM_CLASSES = 8
TOY_D_IN = 32
TOY_N_PER_CLIENT = 200
TOY_CLASS_SCALE = 2.6
TOY_TEST_FRAC = 0.6
TOY_ROUNDS = 80
TOY_CLIENT_CLASSES = [(4, 5, 6, 7), (4, 5, 6, 7), (0, 1, 2, 3)]
TOY_REGIMES = {
    "solo_2": [],
    "coop_12": [(0, 1)],
    "coop_23": [(1, 2)],
    "coop_123": [(0, 1), (0, 2), (1, 2)],
}
TOY_TARGET = 1   # client "2" in the 1-based story above


def toy_config() -> ExperimentConfig:
    return ExperimentConfig(
        m=3, rounds=TOY_ROUNDS, algorithm="local_only",
        num_classes=TOY_NUM_CLASSES, d_in=TOY_D_IN,
        n_per_client=TOY_N_PER_CLIENT, test_frac=TOY_TEST_FRAC,
        d_hidden=6, k_w=5, k_beta=5, eta_w=0.05, eta_beta=0.05,
        batch_size=32, eval_batch=32)


def toy_datasets(seed: int) -> list[data_mod.Dataset]:
    rng = substream(seed, engine.TAG_DATA)
    means = rng.normal(0.0, 1.0, (TOY_NUM_CLASSES, TOY_D_IN))
    means *= TOY_CLASS_SCALE / np.sqrt(TOY_D_IN)
    shards = []
    for classes in TOY_CLIENT_CLASSES:
        reps = -(-TOY_N_PER_CLIENT // len(classes))
        labels = np.tile(np.array(classes), reps)[:TOY_N_PER_CLIENT]
        rng.shuffle(labels)
        X = means[labels] + rng.normal(0.0, 1.0, (TOY_N_PER_CLIENT, TOY_D_IN))
        shards.append(data_mod.Dataset(X, labels.astype(np.int64), TOY_NUM_CLASSES))
    return shards


def run_toy(seeds: list[int]) -> dict[str, dict]:
    """Accuracy of the target client under each cooperation regime.

    Returns {regime: {"per_seed": [...], "mean": float}}.
    """
    out: dict[str, dict] = {r: {"per_seed": []} for r in TOY_REGIMES}
    for seed in seeds:
        shards = toy_datasets(seed)
        for regime, edges in TOY_REGIMES.items():
            cfg = toy_config().with_overrides(seed=seed)
            if edges:
                # k is capped at the neighborhood size, so 2 means "everyone"
                cfg = cfg.with_overrides(algorithm="gossip_k:2")
            topo = topology_from_edges(3, edges)
            shape = ModelShape(TOY_D_IN, cfg.d_hidden, TOY_NUM_CLASSES)
            rts = engine.clients_from_datasets(cfg, shards, topo, shape)
            rts, _, _ = engine.run_rounds(cfg, shape, topo, rts)
            accs = engine.evaluate(shape, rts)
            out[regime]["per_seed"].append(float(accs[TOY_TARGET]))
    for regime in out:
        out[regime]["mean"] = statistics.fmean(out[regime]["per_seed"])
    return out


def cmd_toy(args) -> int:
    seeds = _parse_int_list(args.seeds) if args.seeds else [0, 1, 2, 3, 4]
    report = run_toy(seeds)
    out_dir = args.out or os.environ.get(OUT_ENV_VAR, "").strip() or "runs"
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "toy_report.csv")
    with open(path, "w", newline="") as fh:
        fh.write("regime,seed,acc\n")
        for regime, entry in report.items():
            for seed, acc in zip(seeds, entry["per_seed"]):
                fh.write(f"{regime},{seed},{acc!r}\n")
    for regime, entry in report.items():
        print(f"{regime:10s} target-client acc mean={entry['mean']:.4f}")
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dflsim",
                                description="Decentralized collaborative training simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configuration over one or more seeds")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", help="comma-separated seed list (default: config seed)")
    run.add_argument("--out", help=f"output root (default: ${OUT_ENV_VAR} or config)")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config value; repeatable")
    run.set_defaults(fn=cmd_run)

    cmp_ = sub.add_parser("compare", help="run several algorithms on one configuration")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--algos", required=True, help="comma-separated algorithm list")
    cmp_.add_argument("--seeds", required=True, help="comma-separated seed list")
    cmp_.add_argument("--out", help="output root")
    cmp_.add_argument("--set", action="append", metavar="KEY=VALUE")
    cmp_.set_defaults(fn=cmd_compare)

    toy = sub.add_parser("toy", help="three-client cooperation demo")
    toy.add_argument("--out", help="output directory")
    toy.add_argument("--seeds", help="comma-separated seed list (default 0-4)")
    toy.set_defaults(fn=cmd_toy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataFormatError, PartitionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
