"""Command-line pipeline: synth, select, counts, eval, verify-bound.

Each subcommand reads and writes plain files in --out, so stages can be
rerun or swapped independently:

    countfeat synth  --config cfg.txt --out run/
    countfeat select --config cfg.txt --out run/
    countfeat counts --config cfg.txt --out run/ --features ACF
    countfeat eval   --config cfg.txt --out run/ --mode online --features ACF
    countfeat verify-bound --trials 1000

One config file serves every stage: flat keys for the pipeline itself
(windows, training, experiment knobs) and the generator's keys and
stanzas side by side.  Unknown flat keys are ignored by each consumer,
--seed overrides the config's seed everywhere.

Exit codes: 0 success, 1 usage error, 2 pipeline/data error, 3 bound
check failed.  Set COUNTFEAT_LOG=INFO (or DEBUG) for progress logging.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    CountingKey,
    Dataset,
    read_dataset,
    read_schema,
    write_dataset,
    write_schema,
)
from .countstore import build_counts, load_table, save_table
from .entropy import bound_sweep
from .errors import EmptyData, InvalidConfig, MissingKeys, PipelineError
from .keyselect import (
    read_keys,
    run_selection,
    write_candidate_report,
    write_keys,
)
from .metrics import emit_report
from .predict import FeatureConfig, run_online_experiment
from .rng import mix, tag
from .synth import generate, ground_truth_keys, parse_sections, synth_config_from_sections
from .trees import TrainParams
from .widedeep import WDParams, run_batch_experiment

__all__ = ["PipelineConfig", "read_config", "main"]

log = logging.getLogger("countfeat")

DATASET_FILE = "dataset.tsv"
SCHEMA_FILE = "dataset.schema.tsv"
TRUTH_FILE = "truth_keys.txt"
CANDIDATES_FILE = "candidates.tsv"
KEYS_FILE = "keys.txt"
RS_KEYS_FILE = "keys_random_sparse.txt"

_T_SPARSE = tag("cli.sparse_keys")
_SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class PipelineConfig:
    """Windows, training knobs, and experiment settings for all stages."""

    seed: int = 42
    selection_days: int = 5
    count_days: int = 15
    eval_days: int = 3
    n_top_users: int = 100
    k: int = 5
    train: TrainParams = field(default_factory=TrainParams)
    holdout_rate: float = 0.01
    bucket_seconds: int = 7200
    streaming: bool = False
    wd: WDParams = field(default_factory=WDParams)

    def __post_init__(self):
        for name in ("selection_days", "count_days", "eval_days"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if not 0.0 <= self.holdout_rate <= 1.0:
            raise InvalidConfig("holdout_rate must be in [0, 1]")
        if self.bucket_seconds < 1:
            raise InvalidConfig("bucket_seconds must be >= 1")
        if self.n_top_users < 1 or self.k < 1:
            raise InvalidConfig("n_top_users and k must be >= 1")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise InvalidConfig(f"expected a boolean, got {text!r}")


def _parse_widths(text: str) -> tuple[int, ...]:
    lowered = text.strip().lower()
    if lowered in ("", "none"):
        return ()
    return tuple(int(p.strip()) for p in text.split(","))


def pipeline_config_from_flat(flat: dict[str, str]) -> PipelineConfig:
    kwargs: dict = {}
    train_kwargs: dict = {}
    wd_kwargs: dict = {}
    try:
        for key in ("seed", "selection_days", "count_days", "eval_days",
                    "n_top_users", "k", "bucket_seconds"):
            if key in flat:
                kwargs[key] = int(flat[key])
        if "holdout_rate" in flat:
            kwargs["holdout_rate"] = float(flat["holdout_rate"])
        if "streaming" in flat:
            kwargs["streaming"] = _parse_bool(flat["streaming"])
        for key in ("n_trees", "max_depth", "min_samples_leaf"):
            if key in flat:
                train_kwargs[key] = int(flat[key])
        for key in ("learning_rate", "min_gain"):
            if key in flat:
                train_kwargs[key] = float(flat[key])
        for key in ("epochs", "batch_size", "embed_dim"):
            if key in flat:
                wd_kwargs[key] = int(flat[key])
        if "step_size" in flat:
            wd_kwargs["step_size"] = float(flat["step_size"])
        if "widths" in flat:
            wd_kwargs["widths"] = _parse_widths(flat["widths"])
    except ValueError as e:
        raise InvalidConfig(f"bad pipeline config value: {e}") from e
    if train_kwargs:
        kwargs["train"] = TrainParams(**train_kwargs)
    if wd_kwargs:
        kwargs["wd"] = WDParams(**wd_kwargs)
    return PipelineConfig(**kwargs)


def read_config(path: str | None):
    """One file, two views: (PipelineConfig, SynthConfig)."""
    if path is None:
        flat, sections = {}, []
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise InvalidConfig(f"cannot read config {path}: {e}") from e
        flat, sections = parse_sections(text)
    return pipeline_config_from_flat(flat), synth_config_from_sections(flat, sections)


def _slug(features: str) -> str:
    return features.lower().replace("-", "_")


def _load_dataset(out_dir: str) -> Dataset:
    schema = read_schema(os.path.join(out_dir, SCHEMA_FILE))
    return read_dataset(os.path.join(out_dir, DATASET_FILE), schema)


def _day_window(dataset: Dataset, day_lo: int, day_hi: int):
    """Impressions whose day index (from the dataset start) is in [lo, hi)."""
    if not dataset.impressions:
        raise EmptyData("dataset has no impressions")
    day0 = dataset.impressions[0].timestamp // _SECONDS_PER_DAY
    lo = (day0 + day_lo) * _SECONDS_PER_DAY
    hi = (day0 + day_hi) * _SECONDS_PER_DAY
    sel = [imp for imp in dataset.impressions if lo <= imp.timestamp < hi]
    if not sel:
        raise InvalidConfig(
            f"days {day_lo}..{day_hi} of the dataset contain no impressions"
        )
    return Dataset(dataset.schema, sel), (lo, hi - 1)


def random_sparse_keys(schema, k: int, seed: int) -> list[CountingKey]:
    """k distinct uniformly drawn 3-feature keys (the sparse baseline)."""
    names = schema.names
    if len(names) < 3:
        raise InvalidConfig("random-sparse keys need at least 3 schema features")
    if k > math.comb(len(names), 3):
        raise InvalidConfig(f"cannot draw {k} distinct 3-feature keys")
    rng = np.random.default_rng(mix(seed, _T_SPARSE))
    keys: list[CountingKey] = []
    seen = set()
    while len(keys) < k:
        combo = tuple(sorted(rng.choice(len(names), size=3, replace=False)))
        if combo in seen:
            continue
        seen.add(combo)
        keys.append(CountingKey(tuple(names[i] for i in combo)))
    return keys


def _counts_file(features: str) -> str:
    return f"counts_{_slug(features)}.tsv"


def _report_file(mode: str, features: str) -> str:
    return f"report_{mode}_{_slug(features)}.txt"


# --- subcommands ------------------------------------------------------------


def cmd_synth(args) -> int:
    pipe, syn = read_config(args.config)
    seed = args.seed if args.seed is not None else pipe.seed
    syn = replace(syn, seed=seed)
    log.info("generating synthetic stream: %d users, %d days", syn.n_users, syn.n_days)
    dataset = generate(syn)
    os.makedirs(args.out, exist_ok=True)
    write_schema(dataset.schema, os.path.join(args.out, SCHEMA_FILE))
    data_path = os.path.join(args.out, DATASET_FILE)
    write_dataset(dataset, data_path)
    write_keys(ground_truth_keys(syn), os.path.join(args.out, TRUTH_FILE))
    with open(data_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    print(f"impressions = {len(dataset.impressions)}")
    print(f"sha256 = {digest}")
    return 0


def cmd_select(args) -> int:
    # deterministic given the dataset; the seed only matters upstream
    pipe, _ = read_config(args.config)
    dataset = _load_dataset(args.out)
    window, _ = _day_window(dataset, 0, pipe.selection_days)
    log.info("selection window holds %d impressions", len(window.impressions))
    keys, stats = run_selection(
        window, pipe.train, n_top_users=pipe.n_top_users, k=pipe.k
    )
    write_keys(keys, os.path.join(args.out, KEYS_FILE))
    write_candidate_report(stats, os.path.join(args.out, CANDIDATES_FILE))
    print(f"candidates = {len(stats)}")
    for key in keys:
        print(f"selected {key.name}")
    return 0


def cmd_counts(args) -> int:
    pipe, _ = read_config(args.config)
    seed = args.seed if args.seed is not None else pipe.seed
    dataset = _load_dataset(args.out)
    if args.features == "ACF":
        keys = read_keys(os.path.join(args.out, KEYS_FILE), dataset.schema)
        if not keys:
            raise MissingKeys(f"{KEYS_FILE} lists no keys")
    else:
        keys = random_sparse_keys(dataset.schema, pipe.k, seed)
        write_keys(keys, os.path.join(args.out, RS_KEYS_FILE))
    window, span = _day_window(dataset, 0, pipe.count_days)
    table = build_counts(window, keys, window=span)
    save_table(table, os.path.join(args.out, _counts_file(args.features)))

    n = len(window.impressions)
    clicks = sum(imp.label for imp in window.impressions)
    ok = True
    for key_idx, key in enumerate(table.keys):
        tot_i = sum(e[0] for (ki, _), e in table.entries.items() if ki == key_idx)
        tot_e = sum(e[1] for (ki, _), e in table.entries.items() if ki == key_idx)
        good = tot_i == n and tot_e == clicks
        ok = ok and good
        print(f"conservation {key.name}: h_i {tot_i}/{n} h_e {tot_e}/{clicks} "
              f"{'ok' if good else 'BROKEN'}")
    return 0 if ok else 2


def cmd_eval(args) -> int:
    pipe, _ = read_config(args.config)
    seed = args.seed if args.seed is not None else pipe.seed
    dataset = _load_dataset(args.out)
    table = None
    if args.features != "BASE":
        table = load_table(
            os.path.join(args.out, _counts_file(args.features)), dataset.schema
        )
    stream, _ = _day_window(dataset, pipe.count_days, pipe.count_days + pipe.eval_days)
    log.info("eval window holds %d impressions", len(stream.impressions))
    fc = FeatureConfig(
        mode=args.features,
        table=table,
        streaming=pipe.streaming and args.features != "BASE" and args.mode == "online",
    )
    echo = {
        "mode": args.mode,
        "selection_days": pipe.selection_days,
        "count_days": pipe.count_days,
        "eval_days": pipe.eval_days,
    }
    if args.mode == "online":
        report = run_online_experiment(
            stream, fc, pipe.train,
            holdout_rate=pipe.holdout_rate,
            bucket_seconds=pipe.bucket_seconds,
            seed=seed,
            config_echo=echo,
        )
    else:
        report = run_batch_experiment(
            stream, fc, pipe.wd,
            seed=seed,
            bucket_seconds=pipe.bucket_seconds,
            config_echo=echo,
        )
    out_path = os.path.join(args.out, _report_file(args.mode, args.features))
    emit_report(report, out_path)
    print(f"report = {out_path}")
    print(f"final_day_rce = {report.final_day_rce!r}")
    print(f"total_holdout = {report.total_holdout}")
    return 0


def cmd_verify_bound(args) -> int:
    reports = bound_sweep(args.trials, args.seed if args.seed is not None else 0)
    violations = [r for r in reports if not r.holds]
    worst = max((r.ig_best_path - r.full_gain for r in reports), default=0.0)
    print(f"trials = {len(reports)}")
    print(f"violations = {len(violations)}")
    print(f"max_margin = {worst!r}")
    print("PASS" if not violations else "FAIL")
    return 0 if not violations else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="countfeat",
        description="counting-feature selection and CTR evaluation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=".", help="artifact directory")

    p = sub.add_parser("synth", help="generate a synthetic impression stream")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select", help="select counting keys from per-user forests")
    common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("counts", help="build count tables over the history window")
    common(p)
    p.add_argument("--features", choices=["ACF", "RANDOM-SPARSE"], default="ACF")
    p.set_defaults(func=cmd_counts)

    p = sub.add_parser("eval", help="run a CTR experiment on the eval window")
    common(p)
    p.add_argument("--mode", choices=["online", "batch"], default="online")
    p.add_argument(
        "--features", choices=["BASE", "ACF", "RANDOM-SPARSE"], default="BASE"
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-bound", help="randomized check of the split-gain bound")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_verify_bound)
    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("COUNTFEAT_LOG", "WARNING").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(name)s %(levelname)s %(message)s")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    _setup_logging()
    try:
        return args.func(args)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
