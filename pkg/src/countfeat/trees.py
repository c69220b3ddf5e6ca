"""Gradient-boosted decision trees with logistic loss.

The learner works on nonnegative integer feature codes only and uses
ordinal threshold splits: a node sends values < threshold left and
values >= threshold right.  Splits maximize the usual second-order
gain 0.5 * (GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)) with L2 strength
l = 1, and leaves take the Newton step -G/(H+l).

Prediction is sigmoid(base_score + learning_rate * sum of leaf scores),
one leaf per tree.  The base score is the log-odds of the smoothed
empirical positive rate (pos + 0.5) / (n + 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyData, InvalidConfig, IoFailure, MalformedRecord

__all__ = [
    "Leaf",
    "Internal",
    "TreeNode",
    "Forest",
    "TrainParams",
    "train_forest",
    "predict_forest",
    "predict_many",
    "tree_margins",
    "enumerate_paths",
    "iter_leaves",
    "dump_forest",
    "load_forest",
    "dumps_forest",
    "loads_forest",
]

_LAMBDA = 1.0  # L2 on leaf weights


@dataclass(frozen=True)
class Leaf:
    score: float


@dataclass(frozen=True)
class Internal:
    feature: int
    threshold: int
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Leaf | Internal


@dataclass(frozen=True)
class Forest:
    trees: tuple[TreeNode, ...]
    learning_rate: float
    base_score: float
    n_features: int


@dataclass(frozen=True)
class TrainParams:
    n_trees: int = 20
    max_depth: int = 3
    learning_rate: float = 0.3
    min_samples_leaf: int = 5
    min_gain: float = 0.0

    def __post_init__(self):
        if self.n_trees < 1:
            raise InvalidConfig("n_trees must be >= 1")
        if self.max_depth < 1:
            raise InvalidConfig("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise InvalidConfig("learning_rate must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise InvalidConfig("min_samples_leaf must be >= 1")


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _as_xy(data) -> tuple[np.ndarray, np.ndarray]:
    """Accept either a list of (vector, label) pairs or an (X, y) tuple.

    The array form is recognized by X being an ndarray.
    """
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        X = np.asarray(data[0], dtype=np.int64)
        y = np.asarray(data[1], dtype=np.float64)
    else:
        pairs = list(data)
        if not pairs:
            return np.empty((0, 0), dtype=np.int64), np.empty(0, dtype=np.float64)
        X = np.asarray([list(v) for v, _ in pairs], dtype=np.int64)
        y = np.asarray([lab for _, lab in pairs], dtype=np.float64)
    if X.ndim != 2:
        X = X.reshape(len(y), -1)
    return X, y


def _best_split(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray, msl: int
) -> tuple[float, int, int] | None:
    """Exhaustive scan over (feature, integer threshold); None if no valid split.

    Ties resolve to the lowest feature index, then the lowest threshold,
    so training is deterministic.
    """
    n = rows.size
    G = float(g[rows].sum())
    H = float(h[rows].sum())
    parent = G * G / (H + _LAMBDA)
    best: tuple[float, int, int] | None = None
    for f in range(X.shape[1]):
        vals = X[rows, f]
        top = int(vals.max())
        if int(vals.min()) == top:
            continue
        cnt = np.bincount(vals, minlength=top + 1)
        gs = np.bincount(vals, weights=g[rows], minlength=top + 1)
        hs = np.bincount(vals, weights=h[rows], minlength=top + 1)
        nl = np.cumsum(cnt)[:-1]  # left size for threshold t = index + 1
        gl = np.cumsum(gs)[:-1]
        hl = np.cumsum(hs)[:-1]
        valid = (nl >= msl) & (n - nl >= msl)
        if not valid.any():
            continue
        gain = 0.5 * (
            gl * gl / (hl + _LAMBDA)
            + (G - gl) * (G - gl) / (H - hl + _LAMBDA)
            - parent
        )
        gain = np.where(valid, gain, -np.inf)
        t = int(np.argmax(gain))  # first max -> lowest threshold
        if best is None or gain[t] > best[0]:
            best = (float(gain[t]), f, t + 1)
    return best


def _build(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    rows: np.ndarray,
    depth: int,
    params: TrainParams,
) -> TreeNode:
    G = float(g[rows].sum())
    H = float(h[rows].sum())
    if depth >= params.max_depth or rows.size < 2 * params.min_samples_leaf:
        return Leaf(-G / (H + _LAMBDA))
    found = _best_split(X, g, h, rows, params.min_samples_leaf)
    if found is None or found[0] <= params.min_gain:
        return Leaf(-G / (H + _LAMBDA))
    _, f, t = found
    mask = X[rows, f] < t
    left = _build(X, g, h, rows[mask], depth + 1, params)
    right = _build(X, g, h, rows[~mask], depth + 1, params)
    return Internal(f, t, left, right)


def tree_margins(node: TreeNode, X: np.ndarray) -> np.ndarray:
    """Leaf score of one tree for every row of X."""
    out = np.empty(X.shape[0], dtype=np.float64)
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        cur, rows = stack.pop()
        if isinstance(cur, Leaf):
            out[rows] = cur.score
        else:
            mask = X[rows, cur.feature] < cur.threshold
            stack.append((cur.left, rows[mask]))
            stack.append((cur.right, rows[~mask]))
    return out


def train_forest(data, params: TrainParams = TrainParams()) -> Forest:
    """Fit a boosted forest; data is (X, y) arrays or (vector, label) pairs.

    Single-label data still yields n_trees trees, each a bare root leaf
    (no split has positive gain), so the forest predicts the smoothed
    empirical rate nudged toward the one observed label.
    """
    X, y = _as_xy(data)
    n = y.shape[0]
    if n == 0:
        raise EmptyData("train_forest needs at least one sample")
    pos = float(y.sum())
    p0 = (pos + 0.5) / (n + 1.0)
    base = float(np.log(p0 / (1.0 - p0)))
    n_features = X.shape[1]

    margins = np.full(n, base, dtype=np.float64)
    all_rows = np.arange(n)
    trees: list[TreeNode] = []
    for _ in range(params.n_trees):
        p = _sigmoid(margins)
        g = p - y
        h = p * (1.0 - p)
        root = _build(X, g, h, all_rows, 0, params)
        trees.append(root)
        margins += params.learning_rate * tree_margins(root, X)
    return Forest(tuple(trees), params.learning_rate, base, n_features)


def _walk(node: TreeNode, x: Sequence[int]) -> Leaf:
    while isinstance(node, Internal):
        node = node.left if x[node.feature] < node.threshold else node.right
    return node


def predict_forest(forest: Forest, x: Sequence[int]) -> float:
    """Probability for a single feature vector."""
    if len(x) != forest.n_features:
        raise DimensionMismatch(
            f"expected {forest.n_features} features, got {len(x)}"
        )
    total = sum(_walk(t, x).score for t in forest.trees)
    return float(_sigmoid(forest.base_score + forest.learning_rate * total))


def predict_many(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Vectorized probabilities for a (n, n_features) matrix."""
    X = np.asarray(X, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise DimensionMismatch(
            f"expected (n, {forest.n_features}) matrix, got {X.shape}"
        )
    margins = np.full(X.shape[0], forest.base_score, dtype=np.float64)
    for t in forest.trees:
        margins += forest.learning_rate * tree_margins(t, X)
    return _sigmoid(margins)


def iter_leaves(node: TreeNode) -> Iterator[Leaf]:
    """Leaves of one tree in left-to-right order."""
    if isinstance(node, Leaf):
        yield node
    else:
        yield from iter_leaves(node.left)
        yield from iter_leaves(node.right)


def enumerate_paths(forest: Forest, feature_names: Sequence[str]) -> list[frozenset[str]]:
    """Feature-name set of every root-to-leaf path across the forest.

    Repeated features along a path collapse into the set once; paths of
    trees that are bare leaves contribute nothing.
    """
    out: list[frozenset[str]] = []

    def rec(node: TreeNode, acc: frozenset[str]) -> None:
        if isinstance(node, Leaf):
            if acc:
                out.append(acc)
            return
        nxt = acc | {feature_names[node.feature]}
        rec(node.left, nxt)
        rec(node.right, nxt)

    for tree in forest.trees:
        rec(tree, frozenset())
    return out


# --- serialization ---------------------------------------------------------
#
# Line-oriented text, nodes in preorder with explicit ids:
#
#   forest<TAB>n_trees<TAB>n_features<TAB>learning_rate<TAB>base_score
#   tree<TAB>index<TAB>n_nodes
#   node<TAB>id<TAB>split<TAB>feature<TAB>threshold<TAB>left_id<TAB>right_id
#   node<TAB>id<TAB>leaf<TAB>score
#
# Floats are written with repr() and round-trip exactly.


def dumps_forest(forest: Forest) -> str:
    lines = [
        f"forest\t{len(forest.trees)}\t{forest.n_features}"
        f"\t{forest.learning_rate!r}\t{forest.base_score!r}"
    ]
    for t_idx, tree in enumerate(forest.trees):
        nodes: list[str] = []

        def rec(node: TreeNode) -> int:
            my_id = len(nodes)
            nodes.append("")  # reserve the slot; preorder ids
            if isinstance(node, Leaf):
                nodes[my_id] = f"node\t{my_id}\tleaf\t{node.score!r}"
            else:
                left_id = rec(node.left)
                right_id = rec(node.right)
                nodes[my_id] = (
                    f"node\t{my_id}\tsplit\t{node.feature}\t{node.threshold}"
                    f"\t{left_id}\t{right_id}"
                )
            return my_id

        rec(tree)
        lines.append(f"tree\t{t_idx}\t{len(nodes)}")
        lines.extend(nodes)
    return "\n".join(lines) + "\n"


def loads_forest(text: str, path: str = "<string>") -> Forest:
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or not lines[0].startswith("forest\t"):
        raise MalformedRecord(path, 1, "missing forest header")
    head = lines[0].split("\t")
    if len(head) != 5:
        raise MalformedRecord(path, 1, "forest header needs 5 fields")
    try:
        n_trees, n_features = int(head[1]), int(head[2])
        lr, base = float(head[3]), float(head[4])
    except ValueError as e:
        raise MalformedRecord(path, 1, str(e)) from e

    trees: list[TreeNode] = []
    pos = 1
    for _ in range(n_trees):
        if pos >= len(lines) or not lines[pos].startswith("tree\t"):
            raise MalformedRecord(path, pos + 1, "expected tree header")
        n_nodes = int(lines[pos].split("\t")[2])
        raw: dict[int, list[str]] = {}
        for off in range(n_nodes):
            parts = lines[pos + 1 + off].split("\t")
            if parts[0] != "node":
                raise MalformedRecord(path, pos + 2 + off, "expected node line")
            raw[int(parts[1])] = parts[2:]
        pos += 1 + n_nodes

        def build(node_id: int) -> TreeNode:
            parts = raw[node_id]
            if parts[0] == "leaf":
                return Leaf(float(parts[1]))
            if parts[0] != "split":
                raise MalformedRecord(path, 0, f"unknown node kind {parts[0]!r}")
            return Internal(
                int(parts[1]), int(parts[2]), build(int(parts[3])), build(int(parts[4]))
            )

        trees.append(build(0))
    return Forest(tuple(trees), lr, base, n_features)


def dump_forest(forest: Forest, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps_forest(forest))
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_forest(path: str) -> Forest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return loads_forest(fh.read(), path)
    except OSError as e:
        raise IoFailure(str(e)) from e
