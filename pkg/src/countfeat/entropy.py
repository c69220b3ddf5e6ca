"""Brute-force empirical entropy oracle for split-gain analysis.

Everything here is written directly from the definitions, in plain
Python, on purpose: these functions are the reference the tree
learner's behavior is checked against, so they share no code with it.

All entropies are in bits (base 2).  The central fact being verified:
the information gain achievable by a tree of binary threshold splits
over a feature set can never exceed H(Y) - H(Y|k), the gain of
conditioning on the full joint value of the set, because the tree's
leaf partition is coarser than the value partition.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import log2
from typing import Iterable, Sequence

from .errors import DegenerateSplit, EmptyData

__all__ = [
    "entropy",
    "conditional_entropy",
    "info_gain_binary_split",
    "BoundReport",
    "verify_lower_bound",
    "bound_sweep",
]


def _h(pos: float, n: float) -> float:
    """Binary entropy of pos/n in bits, with 0 log 0 = 0."""
    if n <= 0:
        return 0.0
    p = pos / n
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * log2(p) - (1.0 - p) * log2(1.0 - p)


def entropy(labels: Sequence[int]) -> float:
    """Empirical label entropy in bits."""
    labels = list(labels)
    if not labels:
        raise EmptyData("entropy of an empty label list")
    return _h(sum(labels), len(labels))


def conditional_entropy(samples: Iterable[tuple[tuple, int]]) -> float:
    """H(Y | value tuple) by exact grouping, in bits."""
    groups: dict[tuple, list[int]] = {}
    n = 0
    for value, label in samples:
        n += 1
        cell = groups.setdefault(tuple(value), [0, 0])
        cell[0] += 1
        cell[1] += label
    if n == 0:
        raise EmptyData("conditional_entropy of an empty sample list")
    return sum(cnt / n * _h(pos, cnt) for cnt, pos in groups.values())


def info_gain_binary_split(
    samples: Sequence[tuple[Sequence[int], int]], feature: int, threshold: int
) -> float:
    """H(Y) minus size-weighted child entropies for one threshold split."""
    left = [lab for vec, lab in samples if vec[feature] < threshold]
    right = [lab for vec, lab in samples if vec[feature] >= threshold]
    if not left or not right:
        raise DegenerateSplit(f"threshold {threshold} on feature {feature} leaves a side empty")
    n = len(samples)
    parent = entropy([lab for _, lab in samples])
    return parent - (len(left) / n) * _h(sum(left), len(left)) - (
        len(right) / n
    ) * _h(sum(right), len(right))


@dataclass(frozen=True)
class BoundReport:
    ig_best_path: float
    full_gain: float
    holds: bool


# groups below are dicts value-tuple -> [count, positives]; aggregating once
# keeps the recursive split search cheap on large sample lists


def _group(samples: Iterable[tuple[Sequence[int], int]], feats: Sequence[int]):
    groups: dict[tuple, list[int]] = {}
    total = pos = 0
    for vec, lab in samples:
        key = tuple(vec[f] for f in feats)
        cell = groups.setdefault(key, [0, 0])
        cell[0] += 1
        cell[1] += lab
        total += 1
        pos += lab
    return groups, total, pos


def _grouped_cond_entropy(groups: dict[tuple, list[int]], total: int) -> float:
    return sum(cnt / total * _h(p, cnt) for cnt, p in groups.values())


def _best_tree_entropy(groups: dict[tuple, list[int]], remaining: tuple[int, ...]) -> float:
    """Weighted leaf entropy (x total) of the greedy one-split-per-feature tree.

    At each node the split with the highest immediate information gain is
    taken (ties: lowest feature position, lowest threshold), the feature is
    consumed for the subtree, and both sides recurse on what is left.
    A split is always taken when any valid one exists: for a binary
    feature that makes the tree partition exhaustive.
    """
    total = sum(c for c, _ in groups.values())
    pos = sum(p for _, p in groups.values())
    here = total * _h(pos, total)
    if not remaining or here == 0.0:
        return here

    best = None  # (weighted child entropy, feature position, threshold)
    for fpos in remaining:
        values = sorted({key[fpos] for key in groups})
        for threshold in values[1:]:
            l_tot = l_pos = 0
            for k, (c, p) in groups.items():
                if k[fpos] < threshold:
                    l_tot += c
                    l_pos += p
            if l_tot == 0 or l_tot == total:
                continue
            child = l_tot * _h(l_pos, l_tot) + (total - l_tot) * _h(
                pos - l_pos, total - l_tot
            )
            if best is None or child < best[0] - 1e-12:
                best = (child, fpos, threshold)
    if best is None:
        return here  # every remaining feature is constant here

    _, fpos, threshold = best
    rest = tuple(f for f in remaining if f != fpos)
    left = {k: v for k, v in groups.items() if k[fpos] < threshold}
    right = {k: v for k, v in groups.items() if k[fpos] >= threshold}
    return _best_tree_entropy(left, rest) + _best_tree_entropy(right, rest)


def verify_lower_bound(
    samples: Sequence[tuple[Sequence[int], int]], feature_set: Iterable[int]
) -> BoundReport:
    """Compare greedy-tree information gain against the full joint gain.

    ig_best_path uses the best greedy sequence of binary splits, one
    split per feature along any path; full_gain conditions on the whole
    value tuple.  holds is the lower-bound inequality at 1e-9 slack.
    """
    feats = tuple(sorted(set(feature_set)))
    if not feats:
        raise EmptyData("feature_set must be nonempty")
    samples = list(samples)
    if not samples:
        raise EmptyData("samples must be nonempty")

    groups, total, pos = _group(samples, feats)
    h_y = _h(pos, total)
    full_gain = h_y - _grouped_cond_entropy(groups, total)
    ig_best_path = h_y - _best_tree_entropy(groups, tuple(range(len(feats)))) / total
    return BoundReport(ig_best_path, full_gain, ig_best_path <= full_gain + 1e-9)


def bound_sweep(n_trials: int, seed: int = 0) -> list[BoundReport]:
    """Check the bound on randomized joint distributions.

    Each trial draws 1-3 features with cardinalities 2-5, a random
    joint cell distribution, a random per-cell label rate, and 200-2000
    samples.  The oracle functions stay pure Python; numpy is used only
    to draw the data.
    """
    import numpy as np

    from .errors import InvalidConfig

    if n_trials < 1:
        raise InvalidConfig("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(n_trials):
        n_feats = int(rng.integers(1, 4))
        cards = [int(rng.integers(2, 6)) for _ in range(n_feats)]
        n = int(rng.integers(200, 2001))
        n_cells = 1
        for c in cards:
            n_cells *= c
        probs = rng.dirichlet(np.ones(n_cells))
        cell_rate = rng.random(n_cells)
        cells = rng.choice(n_cells, size=n, p=probs)
        labels = rng.random(n) < cell_rate[cells]
        vecs = np.array(np.unravel_index(cells, cards)).T
        samples = [
            (tuple(int(v) for v in vec), int(lab))
            for vec, lab in zip(vecs, labels)
        ]
        reports.append(verify_lower_bound(samples, range(n_feats)))
    return reports
