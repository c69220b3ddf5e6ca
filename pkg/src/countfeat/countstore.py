"""Counting-feature tables: impressions, engagements, and their ratio.

A table is indexed by (key, value-tuple) where the value tuple is
(user_id, *feature values in the key's canonical feature order).  Each
entry carries h_i (impressions seen) and h_e (engagements seen);
h_p = h_e / h_i is derived, never stored.  Unseen tuples read as
(0, 0, 0) and are reported as missing.

Tables can be built in one pass over a history window or kept fresh by
streaming updates; both routes produce identical entries for the same
impressions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import CountingKey, Dataset, FeatureSchema, Impression, project
from .errors import (
    EmptyData,
    IoFailure,
    MalformedRecord,
    MissingKeys,
    OutOfOrderUpdate,
    SchemaMismatch,
)

__all__ = [
    "CountRecord",
    "CountTable",
    "build_counts",
    "join_counts",
    "join_matrix",
    "save_table",
    "load_table",
]


@dataclass(frozen=True)
class CountRecord:
    """Read-only view of one table entry."""

    h_i: int
    h_e: int

    @property
    def h_p(self) -> float:
        return self.h_e / self.h_i if self.h_i > 0 else 0.0


@dataclass(eq=False)
class CountTable:
    """Counts for a fixed tuple of keys over some stretch of history."""

    schema: FeatureSchema
    keys: tuple[CountingKey, ...]
    entries: dict = field(default_factory=dict)
    window: tuple[int, int] | None = None
    _key_cols: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.keys:
            raise MissingKeys("a count table needs at least one key")
        self._key_cols = tuple(
            tuple(self.schema.index(name) for name in key.features)
            for key in self.keys
        )

    def lookup(self, key_idx: int, values: tuple) -> CountRecord:
        entry = self.entries.get((key_idx, values))
        if entry is None:
            return CountRecord(0, 0)
        return CountRecord(entry[0], entry[1])

    def observe(self, impression: Impression) -> None:
        """Fold one impression into every key's counts."""
        label = impression.label
        for key_idx, cols in enumerate(self._key_cols):
            tup = (impression.user_id,) + tuple(impression.values[c] for c in cols)
            entry = self.entries.get((key_idx, tup))
            if entry is None:
                self.entries[(key_idx, tup)] = [1, label]
            else:
                entry[0] += 1
                entry[1] += label

    def stream_update(self, impression: Impression) -> None:
        """Observe one impression, enforcing nondecreasing timestamps."""
        if self.window is not None and impression.timestamp < self.window[1]:
            raise OutOfOrderUpdate(
                f"timestamp {impression.timestamp} precedes high-water mark "
                f"{self.window[1]}"
            )
        self.observe(impression)
        if self.window is None:
            self.window = (impression.timestamp, impression.timestamp)
        else:
            self.window = (self.window[0], impression.timestamp)


def build_counts(
    dataset_or_impressions,
    keys: Sequence[CountingKey],
    schema: FeatureSchema | None = None,
    window: tuple[int, int] | None = None,
) -> CountTable:
    """One-pass table over impressions, optionally clipped to [lo, hi].

    Accepts a Dataset (schema implied) or an impression iterable plus an
    explicit schema.  The window bound is inclusive on both ends.
    """
    if isinstance(dataset_or_impressions, Dataset):
        schema = dataset_or_impressions.schema
        impressions: Iterable[Impression] = dataset_or_impressions.impressions
    else:
        if schema is None:
            raise SchemaMismatch("an impression iterable needs an explicit schema")
        impressions = dataset_or_impressions
    table = CountTable(schema=schema, keys=tuple(keys), window=window)
    for imp in impressions:
        if window is not None and not (window[0] <= imp.timestamp <= window[1]):
            continue
        table.observe(imp)
    return table


def join_counts(
    table: CountTable, impression: Impression
) -> tuple[list[float], list[bool]]:
    """Counting features for one impression: 3 floats per key + presence.

    Layout is [h_i, h_e, h_p] per key in table-key order.  A key whose
    tuple was never counted contributes (0, 0, 0) and present=False.
    """
    feats: list[float] = []
    present: list[bool] = []
    for key_idx, cols in enumerate(table._key_cols):
        tup = (impression.user_id,) + tuple(impression.values[c] for c in cols)
        rec = table.lookup(key_idx, tup)
        feats.extend((float(rec.h_i), float(rec.h_e), rec.h_p))
        present.append(rec.h_i > 0)
    return feats, present


def join_matrix(
    table: CountTable, impressions: Sequence[Impression]
) -> tuple[np.ndarray, np.ndarray]:
    """join_counts over many impressions: (n, 3k) floats, (n, k) bools."""
    n, k = len(impressions), len(table.keys)
    feats = np.zeros((n, 3 * k), dtype=np.float64)
    present = np.zeros((n, k), dtype=bool)
    for i, imp in enumerate(impressions):
        row, flags = join_counts(table, imp)
        feats[i] = row
        present[i] = flags
    return feats, present


# --- serialization ----------------------------------------------------------
# Header lines name the keys; body lines are
#   key_index TAB comma-joined-tuple TAB h_i TAB h_e
# h_p is derived on load.  The window is runtime state and is not kept.


def save_table(table: CountTable, path: str) -> None:
    lines = [f"# key\t{i}\t{key.name}" for i, key in enumerate(table.keys)]
    body = []
    for (key_idx, tup), (h_i, h_e) in table.entries.items():
        body.append((key_idx, tup, h_i, h_e))
    body.sort(key=lambda r: (r[0], r[1]))
    for key_idx, tup, h_i, h_e in body:
        lines.append(f"{key_idx}\t{','.join(str(v) for v in tup)}\t{h_i}\t{h_e}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_table(path: str, schema: FeatureSchema) -> CountTable:
    keys: dict[int, CountingKey] = {}
    rows: list[tuple[int, tuple, int, int]] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line:
                    continue
                if line.startswith("# key\t"):
                    _, idx_s, name = line.split("\t", 2)
                    keys[int(idx_s)] = CountingKey.parse(name)
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise MalformedRecord(path, line_no, "expected 4 fields")
                try:
                    key_idx = int(parts[0])
                    tup = tuple(int(v) for v in parts[1].split(","))
                    h_i, h_e = int(parts[2]), int(parts[3])
                except ValueError as e:
                    raise MalformedRecord(path, line_no, str(e)) from e
                if key_idx not in keys:
                    raise MalformedRecord(path, line_no, f"unknown key index {key_idx}")
                if len(tup) != len(keys[key_idx].features) + 1:
                    raise MalformedRecord(
                        path, line_no, f"tuple arity {len(tup)} does not match key"
                    )
                if h_i < 0 or h_e < 0 or h_e > h_i:
                    raise MalformedRecord(
                        path, line_no, f"invalid counts h_i={h_i} h_e={h_e}"
                    )
                rows.append((key_idx, tup, h_i, h_e))
    except OSError as e:
        raise IoFailure(str(e)) from e
    if not keys:
        raise MissingKeys(f"{path} declares no keys")
    ordered = tuple(keys[i] for i in sorted(keys))
    if sorted(keys) != list(range(len(ordered))):
        raise MalformedRecord(path, 0, "key indexes are not dense from 0")
    table = CountTable(schema=schema, keys=ordered)
    for key_idx, tup, h_i, h_e in rows:
        table.entries[(key_idx, tup)] = [h_i, h_e]
    return table
