"""Online CTR prediction: boosted-tree leaf encoding into logistic regression.

A shared forest (trained on the train-routed part of the stream) acts
as a discretizer: each impression is encoded as one active leaf index
per tree, and an online logistic regression over that one-hot space is
updated impression by impression.  Holdout impressions are predicted
but never update anything, so no recorded prediction depends on any
holdout label.

Counting features enter the trees as ordinal codes: impression and
engagement counts as floor(log2(1 + h)) and the ratio h_p in
sixteenths.  The raw float values ride along for the coverage and
correlation tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Dataset, FeatureSchema, Impression
from .countstore import CountTable, join_counts, join_matrix
from .errors import DimensionMismatch, EmptyStream, InvalidConfig
from .metrics import BucketStat, ExperimentReport, cross_entropy, coverage, pearson, rce
from .rng import tag, u01_vec
from .trees import (
    Forest,
    Internal,
    Leaf,
    TrainParams,
    TreeNode,
    dumps_forest,
    iter_leaves,
    loads_forest,
    train_forest,
)

__all__ = [
    "FeatureConfig",
    "count_feature_names",
    "tree_input_names",
    "assemble_inputs",
    "LeafEncoder",
    "train_encoder",
    "OnlineLR",
    "lr_step",
    "OnlineRunArtifacts",
    "run_online_replay",
    "run_online_experiment",
    "save_checkpoint",
    "load_checkpoint",
]

MODES = ("BASE", "ACF", "RANDOM-SPARSE")
_T_ROUTE = tag("predict.route")


@dataclass(frozen=True)
class FeatureConfig:
    """Which feature set feeds the predictors.

    BASE uses contextual features only.  ACF and RANDOM-SPARSE add the
    counting features joined from `table`; they differ only in how the
    table's keys were chosen.  With `streaming` set, train-routed
    impressions also update the table after being predicted.
    """

    mode: str = "BASE"
    table: CountTable | None = None
    streaming: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode != "BASE" and self.table is None:
            raise InvalidConfig(f"mode {self.mode} needs a count table")
        if self.mode == "BASE" and self.streaming:
            raise InvalidConfig("streaming updates need a count table")

    @property
    def n_keys(self) -> int:
        return 0 if self.table is None else len(self.table.keys)


def count_feature_names(table: CountTable) -> list[str]:
    """Report/column names for the joined triples, in key order."""
    names = []
    for key in table.keys:
        names.extend(
            (f"{key.name}:impressions", f"{key.name}:engagements", f"{key.name}:ctr")
        )
    return names


def tree_input_names(schema: FeatureSchema, config: FeatureConfig) -> list[str]:
    names = list(schema.names)
    if config.table is not None:
        names.extend(count_feature_names(config.table))
    return names


def _bucket_counts(feats: np.ndarray) -> np.ndarray:
    """Ordinal codes for raw (h_i, h_e, h_p) triples."""
    out = np.empty(feats.shape, dtype=np.int64)
    out[..., 0::3] = np.floor(np.log2(1.0 + feats[..., 0::3]))
    out[..., 1::3] = np.floor(np.log2(1.0 + feats[..., 1::3]))
    out[..., 2::3] = np.minimum(15, (feats[..., 2::3] * 16.0).astype(np.int64))
    return out


def assemble_inputs(
    impressions: Sequence[Impression], schema: FeatureSchema, config: FeatureConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tree-ready codes plus the raw counting values behind them.

    Returns (X_tree, count_values, present): X_tree is (n, F + 3k)
    int64, count_values is the raw (n, 3k) float triples, present is
    the (n, k) per-key join flags.  BASE mode yields zero-width count
    blocks.
    """
    n = len(impressions)
    ctx = np.array([imp.values for imp in impressions], dtype=np.int64).reshape(
        n, len(schema)
    )
    if config.table is None:
        return ctx, np.zeros((n, 0)), np.zeros((n, 0), dtype=bool)
    vals, present = join_matrix(config.table, impressions)
    return np.hstack([ctx, _bucket_counts(vals)]), vals, present


@dataclass
class LeafEncoder:
    """Shared forest plus the indexing that turns leaves into positions."""

    forest: Forest
    _leaf_ids: list[dict] = field(init=False, repr=False)
    offsets: tuple[int, ...] = field(init=False)
    width: int = field(init=False)

    def __post_init__(self):
        self._leaf_ids = []
        offsets = []
        total = 0
        for tree in self.forest.trees:
            ids = {id(leaf): i for i, leaf in enumerate(iter_leaves(tree))}
            self._leaf_ids.append(ids)
            offsets.append(total)
            total += len(ids)
        self.offsets = tuple(offsets)
        self.width = total

    def encode(self, x: Sequence[int]) -> np.ndarray:
        """Global index of the active leaf in each tree."""
        if len(x) != self.forest.n_features:
            raise DimensionMismatch(
                f"expected {self.forest.n_features} features, got {len(x)}"
            )
        active = np.empty(len(self.forest.trees), dtype=np.int64)
        for t_idx, tree in enumerate(self.forest.trees):
            node = tree
            while isinstance(node, Internal):
                node = node.left if x[node.feature] < node.threshold else node.right
            active[t_idx] = self.offsets[t_idx] + self._leaf_ids[t_idx][id(node)]
        return active

    def encode_matrix(self, X: np.ndarray) -> np.ndarray:
        """encode() for every row: (n, n_trees) global indices."""
        X = np.asarray(X, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != self.forest.n_features:
            raise DimensionMismatch(
                f"expected (n, {self.forest.n_features}) matrix, got {X.shape}"
            )
        out = np.empty((X.shape[0], len(self.forest.trees)), dtype=np.int64)
        for t_idx, tree in enumerate(self.forest.trees):
            ids = self._leaf_ids[t_idx]
            col = out[:, t_idx]
            stack: list[tuple[TreeNode, np.ndarray]] = [
                (tree, np.arange(X.shape[0]))
            ]
            while stack:
                node, rows = stack.pop()
                if isinstance(node, Leaf):
                    col[rows] = self.offsets[t_idx] + ids[id(node)]
                else:
                    mask = X[rows, node.feature] < node.threshold
                    stack.append((node.left, rows[mask]))
                    stack.append((node.right, rows[~mask]))
        return out


def train_encoder(
    train: Dataset, config: FeatureConfig, params: TrainParams = TrainParams()
) -> LeafEncoder:
    """Fit the discretizer forest on the configured feature set."""
    X, _, _ = assemble_inputs(train.impressions, train.schema, config)
    y = np.array([imp.label for imp in train.impressions], dtype=np.float64)
    return LeafEncoder(train_forest((X, y), params))


@dataclass
class OnlineLR:
    """Logistic regression over leaf encodings, updated one step at a time."""

    weights: np.ndarray
    bias: float = 0.0
    t: int = 0
    eta0: float = 0.1
    decay_steps: float = 1e4


def lr_step(model: OnlineLR, active: np.ndarray, y: int) -> tuple[OnlineLR, float]:
    """Predict, then take one SGD step with inverse-time decay.

    The returned probability is computed before the update, so it never
    reflects the current label.
    """
    score = model.bias + float(model.weights[active].sum())
    p = 1.0 / (1.0 + np.exp(-score))
    eta = model.eta0 / (1.0 + model.t / model.decay_steps)
    step = eta * (p - y)
    model.weights[active] -= step
    model.bias -= step
    model.t += 1
    return model, float(p)


def _predict_sparse(model: OnlineLR, active: np.ndarray) -> float:
    score = model.bias + float(model.weights[active].sum())
    return float(1.0 / (1.0 + np.exp(-score)))


@dataclass
class OnlineRunArtifacts:
    """Everything a replay produces, for reporting and invariant checks."""

    ids: np.ndarray
    preds: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray
    holdout: np.ndarray
    count_values: np.ndarray
    present: np.ndarray
    baseline_p: float
    encoder: LeafEncoder | None
    model: OnlineLR
    flags: list[str]


def run_online_replay(
    stream: Dataset,
    config: FeatureConfig,
    params: TrainParams = TrainParams(),
    holdout_rate: float = 0.01,
    seed: int = 0,
) -> OnlineRunArtifacts:
    """Chronological replay: route, encode, predict, then maybe update.

    Routing hashes only (seed, impression id), so two runs with the
    same seed agree on holdout membership whatever features they use.
    The encoder, the baseline rate, and any streaming count updates see
    train-routed impressions only.
    """
    if not 0.0 <= holdout_rate <= 1.0:
        raise InvalidConfig(f"holdout_rate {holdout_rate} not in [0, 1]")
    imps = stream.impressions
    if not imps:
        raise EmptyStream("online experiment over an empty stream")
    schema = stream.schema
    n = len(imps)
    ids = np.array([imp.id for imp in imps], dtype=np.int64)
    labels = np.array([imp.label for imp in imps], dtype=np.int64)
    timestamps = np.array([imp.timestamp for imp in imps], dtype=np.int64)
    holdout = u01_vec(seed, _T_ROUTE, ids) < holdout_rate

    flags: list[str] = []
    train_rows = np.flatnonzero(~holdout)
    if not holdout.any():
        flags.append("NoHoldout")
    if train_rows.size == 0:
        flags.append("EmptyTrain")
        baseline_p = 0.5
    else:
        # smoothed fallback keeps the baseline inside (0, 1) on one-sided data
        clicks = int(labels[train_rows].sum())
        n_train = train_rows.size
        if 0 < clicks < n_train:
            baseline_p = clicks / n_train
        else:
            baseline_p = (clicks + 0.5) / (n_train + 1.0)

    encoder = None
    if train_rows.size:
        train_ds = Dataset(schema, [imps[i] for i in train_rows])
        encoder = train_encoder(train_ds, config, params)
    width = encoder.width if encoder is not None else 0
    model = OnlineLR(np.zeros(width, dtype=np.float64))

    preds = np.empty(n, dtype=np.float64)
    if config.streaming:
        count_values = np.zeros((n, 3 * config.n_keys))
        present = np.zeros((n, config.n_keys), dtype=bool)
        empty = np.empty(0, dtype=np.int64)
        for i, imp in enumerate(imps):
            if config.table is not None:
                row, row_flags = join_counts(config.table, imp)
                count_values[i] = row
                present[i] = row_flags
            if encoder is not None:
                x = np.concatenate(
                    [np.asarray(imp.values, dtype=np.int64),
                     _bucket_counts(count_values[i])]
                )
                active = encoder.encode(x)
            else:
                active = empty
            if holdout[i]:
                preds[i] = _predict_sparse(model, active)
            else:
                _, preds[i] = lr_step(model, active, imp.label)
                config.table.stream_update(imp)
    else:
        X, count_values, present = assemble_inputs(imps, schema, config)
        enc = (
            encoder.encode_matrix(X)
            if encoder is not None
            else np.empty((n, 0), dtype=np.int64)
        )
        for i in range(n):
            if holdout[i]:
                preds[i] = _predict_sparse(model, enc[i])
            else:
                _, preds[i] = lr_step(model, enc[i], int(labels[i]))

    return OnlineRunArtifacts(
        ids=ids,
        preds=preds,
        labels=labels,
        timestamps=timestamps,
        holdout=holdout,
        count_values=count_values,
        present=present,
        baseline_p=baseline_p,
        encoder=encoder,
        model=model,
        flags=flags,
    )


def summarize_run(
    art: OnlineRunArtifacts,
    config: FeatureConfig,
    seed: int,
    bucket_seconds: int = 7200,
    config_echo: dict | None = None,
) -> ExperimentReport:
    """Bucketed holdout quality plus the feature tables, as a report."""
    if bucket_seconds < 1:
        raise InvalidConfig("bucket_seconds must be >= 1")
    flags = list(art.flags)
    report = ExperimentReport(seed=seed, flags=flags)
    report.config = dict(config_echo or {})
    report.config.setdefault("features", config.mode)
    report.config.setdefault("bucket_seconds", bucket_seconds)
    report.config.setdefault("streaming", int(config.streaming))
    report.config.setdefault("baseline_p", art.baseline_p)

    hold = np.flatnonzero(art.holdout)
    report.total_holdout = int(hold.size)
    if hold.size:
        starts = (art.timestamps[hold] // bucket_seconds) * bucket_seconds
        for start in np.unique(starts):
            rows = hold[starts == start]
            p, y = art.preds[rows], art.labels[rows]
            report.buckets.append(
                BucketStat(
                    int(start),
                    int(rows.size),
                    cross_entropy(p, y),
                    rce(p, y, art.baseline_p),
                )
            )
        final_day = int(art.timestamps.max() // 86400)
        day_rows = hold[art.timestamps[hold] // 86400 == final_day]
        if day_rows.size:
            report.final_day_rce = rce(
                art.preds[day_rows], art.labels[day_rows], art.baseline_p
            )
        else:
            flags.append("NoFinalDayHoldout")

    if config.table is not None:
        names = count_feature_names(config.table)
        for j, name in enumerate(names):
            vals = art.count_values[:, j]
            pres = art.present[:, j // 3]
            report.coverage[name] = coverage(vals, pres)
            if int(pres.sum()) >= 2:
                report.correlation[name] = pearson(vals, pres, art.labels)
            else:
                report.correlation[name] = None
    return report


def run_online_experiment(
    stream: Dataset,
    config: FeatureConfig,
    params: TrainParams = TrainParams(),
    holdout_rate: float = 0.01,
    bucket_seconds: int = 7200,
    seed: int = 0,
    config_echo: dict | None = None,
) -> ExperimentReport:
    """Replay the stream once and summarize it; deterministic given seed."""
    art = run_online_replay(stream, config, params, holdout_rate, seed)
    echo = dict(config_echo or {})
    echo.setdefault("holdout_rate", holdout_rate)
    echo.setdefault("n_trees", params.n_trees)
    echo.setdefault("max_depth", params.max_depth)
    return summarize_run(art, config, seed, bucket_seconds, echo)


# --- checkpoints ------------------------------------------------------------
# Forest dump first, then one "lr" header and the nonzero weights:
#   lr<TAB>width<TAB>bias<TAB>t<TAB>eta0<TAB>decay_steps
#   w<TAB>index<TAB>value


def save_checkpoint(encoder: LeafEncoder, model: OnlineLR, path: str) -> None:
    from .errors import IoFailure

    lines = [dumps_forest(encoder.forest).rstrip("\n")]
    lines.append(
        f"lr\t{model.weights.size}\t{model.bias!r}\t{model.t}"
        f"\t{model.eta0!r}\t{model.decay_steps!r}"
    )
    for idx in np.flatnonzero(model.weights):
        lines.append(f"w\t{int(idx)}\t{model.weights[idx]!r}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_checkpoint(path: str) -> tuple[LeafEncoder, OnlineLR]:
    from .errors import IoFailure, MalformedRecord

    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise IoFailure(str(e)) from e
    head, sep, tail = text.partition("\nlr\t")
    if not sep:
        raise MalformedRecord(path, 0, "missing lr section")
    encoder = LeafEncoder(loads_forest(head + "\n", path))
    lr_lines = ("lr\t" + tail).splitlines()
    parts = lr_lines[0].split("\t")
    if len(parts) != 6:
        raise MalformedRecord(path, 0, "lr header needs 6 fields")
    model = OnlineLR(
        np.zeros(int(parts[1]), dtype=np.float64),
        bias=float(parts[2]),
        t=int(parts[3]),
        eta0=float(parts[4]),
        decay_steps=float(parts[5]),
    )
    for line in lr_lines[1:]:
        if not line:
            continue
        fields = line.split("\t")
        if fields[0] != "w" or len(fields) != 3:
            raise MalformedRecord(path, 0, f"bad weight line {line!r}")
        model.weights[int(fields[1])] = float(fields[2])
    if encoder.width != model.weights.size:
        raise MalformedRecord(
            path, 0,
            f"encoder width {encoder.width} != weight count {model.weights.size}",
        )
    return encoder, model
