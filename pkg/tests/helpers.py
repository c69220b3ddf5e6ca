"""Shared builders for the test suite."""

import numpy as np

from countfeat.core import Dataset, FeatureDescriptor, FeatureSchema, Impression


def small_schema() -> FeatureSchema:
    return FeatureSchema(
        (
            FeatureDescriptor("color", "categorical", 4),
            FeatureDescriptor("shape", "categorical", 3),
            FeatureDescriptor("size", "categorical", 5),
        )
    )


def imp(i, ts=None, user=0, ad=0, values=(0, 0, 0), label=0) -> Impression:
    """Impression with defaults; timestamp falls back to the id."""
    return Impression(i, i if ts is None else ts, user, ad, tuple(values), label)


def random_dataset(schema, n, seed, n_users=8, ctr=0.3, n_days=3) -> Dataset:
    """Unstructured impressions; labels independent of everything else."""
    gen = np.random.default_rng(seed)
    cards = schema.cardinalities()
    rows = [
        Impression(
            i,
            int(gen.integers(0, n_days * 86400)),
            int(gen.integers(n_users)),
            int(gen.integers(5)),
            tuple(int(gen.integers(c)) for c in cards),
            int(gen.random() < ctr),
        )
        for i in range(n)
    ]
    return Dataset.from_unsorted(schema, rows)
