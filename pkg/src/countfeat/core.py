"""Feature schema, impression records, and dataset serialization.

Two file formats defined here are stable, bit-exact contracts:

* dataset file: UTF-8 text, one impression per line, tab-separated
  fields in order ``id  timestamp  user_id  ad_id  label`` followed by
  one integer code per schema feature, in schema order.
* schema file: one feature per line, ``name<TAB>kind<TAB>cardinality``
  with kind in {categorical, ordinal}.

All categorical values are dense integer codes in [0, cardinality); the
name dictionary lives out-of-band in the schema.  Value order is the
declaration order of the schema, which is also the order the tree
module's threshold splits assume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    DuplicateId,
    InvalidConfig,
    IoFailure,
    MalformedRecord,
    SchemaMismatch,
    UnknownFeature,
)

__all__ = [
    "RESERVED_NAMES",
    "FeatureDescriptor",
    "FeatureSchema",
    "Impression",
    "Dataset",
    "CountingKey",
    "DatasetColumns",
    "columns",
    "project",
    "read_schema",
    "write_schema",
    "read_dataset",
    "write_dataset",
]

RESERVED_NAMES = frozenset({"user_id", "ad_id", "timestamp", "label"})

_KINDS = ("categorical", "ordinal")


@dataclass(frozen=True)
class FeatureDescriptor:
    """One contextual feature: a name, a kind, and a code cardinality."""

    name: str
    kind: str
    cardinality: int

    def __post_init__(self):
        if not self.name:
            raise InvalidConfig("feature name must be non-empty")
        if self.name in RESERVED_NAMES:
            raise InvalidConfig(f"feature name {self.name!r} is reserved")
        if self.kind not in _KINDS:
            raise InvalidConfig(f"unknown feature kind {self.kind!r}")
        lo = 2 if self.kind == "categorical" else 1
        if self.cardinality < lo:
            raise InvalidConfig(
                f"cardinality of {self.name} must be >= {lo}, got {self.cardinality}"
            )


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered list of contextual feature descriptors."""

    features: tuple[FeatureDescriptor, ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise InvalidConfig("feature names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self) -> Iterator[FeatureDescriptor]:
        return iter(self.features)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownFeature(f"feature {name!r} not in schema") from None

    def cardinalities(self) -> tuple[int, ...]:
        return tuple(f.cardinality for f in self.features)


@dataclass(frozen=True, slots=True)
class Impression:
    """One (user, ad, context, label) event."""

    id: int
    timestamp: int
    user_id: int
    ad_id: int
    values: tuple[int, ...]
    label: int


@dataclass
class Dataset:
    """Impressions ordered by (timestamp, id) under a fixed schema."""

    schema: FeatureSchema
    impressions: list[Impression]

    def __len__(self) -> int:
        return len(self.impressions)

    def __iter__(self) -> Iterator[Impression]:
        return iter(self.impressions)

    @classmethod
    def from_unsorted(cls, schema: FeatureSchema, impressions: Iterable[Impression]) -> "Dataset":
        rows = sorted(impressions, key=lambda r: (r.timestamp, r.id))
        return cls(schema, rows)


@dataclass(frozen=True)
class CountingKey:
    """An unordered set of contextual feature names.

    The user id is an implicit extra component everywhere a key is
    materialized, so it is never a member itself.  Names are stored
    sorted; equality and hashing ignore the order given at construction.
    """

    features: tuple[str, ...]

    def __post_init__(self):
        canon = tuple(sorted(set(self.features)))
        if not canon:
            raise InvalidConfig("a counting key needs at least one feature")
        for name in canon:
            if name in RESERVED_NAMES:
                raise InvalidConfig(f"reserved name {name!r} cannot be a key member")
        object.__setattr__(self, "features", canon)

    @property
    def name(self) -> str:
        return "+".join(self.features)

    @classmethod
    def parse(cls, text: str) -> "CountingKey":
        return cls(tuple(p for p in text.strip().split("+") if p))

    def __str__(self) -> str:
        return self.name


class DatasetColumns(NamedTuple):
    """Column-major view of a dataset for numeric work."""

    ids: np.ndarray
    timestamps: np.ndarray
    user_ids: np.ndarray
    ad_ids: np.ndarray
    labels: np.ndarray
    values: np.ndarray  # (n, n_features) int64


def columns(dataset: Dataset) -> DatasetColumns:
    n = len(dataset.impressions)
    width = len(dataset.schema)
    ids = np.empty(n, dtype=np.int64)
    ts = np.empty(n, dtype=np.int64)
    users = np.empty(n, dtype=np.int64)
    ads = np.empty(n, dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    values = np.empty((n, width), dtype=np.int64)
    for i, imp in enumerate(dataset.impressions):
        ids[i] = imp.id
        ts[i] = imp.timestamp
        users[i] = imp.user_id
        ads[i] = imp.ad_id
        labels[i] = imp.label
        values[i] = imp.values
    return DatasetColumns(ids, ts, users, ads, labels, values)


def project(impression: Impression, key: CountingKey, schema: FeatureSchema) -> tuple[int, ...]:
    """Value tuple of an impression under a key: (user_id, key values).

    Key features are read in the key's canonical (sorted-name) order.
    """
    return (impression.user_id,) + tuple(
        impression.values[schema.index(name)] for name in key.features
    )


# --- schema file -----------------------------------------------------------


def write_schema(schema: FeatureSchema, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for f in schema:
                fh.write(f"{f.name}\t{f.kind}\t{f.cardinality}\n")
    except OSError as e:
        raise IoFailure(str(e)) from e


def read_schema(path: str) -> FeatureSchema:
    feats = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise MalformedRecord(path, line_no, f"expected 3 fields, got {len(parts)}")
                name, kind, card = parts
                try:
                    feats.append(FeatureDescriptor(name, kind, int(card)))
                except (ValueError, InvalidConfig) as e:
                    raise MalformedRecord(path, line_no, str(e)) from e
    except OSError as e:
        raise IoFailure(str(e)) from e
    return FeatureSchema(tuple(feats))


# --- dataset file ----------------------------------------------------------


def write_dataset(dataset: Dataset, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for r in dataset.impressions:
                head = f"{r.id}\t{r.timestamp}\t{r.user_id}\t{r.ad_id}\t{r.label}"
                if r.values:
                    fh.write(head + "\t" + "\t".join(map(str, r.values)) + "\n")
                else:
                    fh.write(head + "\n")
    except OSError as e:
        raise IoFailure(str(e)) from e


def read_dataset(path: str, schema: FeatureSchema) -> Dataset:
    """Parse a dataset file, validate against the schema, sort, and return.

    Raises MalformedRecord for unparseable lines, SchemaMismatch for
    out-of-range codes or wrong field counts, DuplicateId for repeated
    impression ids.
    """
    cards = schema.cardinalities()
    expected = 5 + len(cards)
    rows: list[Impression] = []
    seen: set[int] = set()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != expected:
                    raise SchemaMismatch(
                        f"{path}:{line_no}: expected {expected} fields, got {len(parts)}"
                    )
                try:
                    nums = [int(p) for p in parts]
                except ValueError as e:
                    raise MalformedRecord(path, line_no, f"non-integer field: {e}") from e
                rid, ts, uid, aid, label = nums[:5]
                vals = tuple(nums[5:])
                if label not in (0, 1):
                    raise MalformedRecord(path, line_no, f"label must be 0/1, got {label}")
                for v, card in zip(vals, cards):
                    if not 0 <= v < card:
                        raise SchemaMismatch(
                            f"{path}:{line_no}: code {v} out of range [0, {card})"
                        )
                if rid in seen:
                    raise DuplicateId(f"{path}:{line_no}: duplicate impression id {rid}")
                seen.add(rid)
                rows.append(Impression(rid, ts, uid, aid, vals, label))
    except OSError as e:
        raise IoFailure(str(e)) from e
    return Dataset.from_unsorted(schema, rows)
