"""Automatic counting-feature selection for CTR prediction.

The pipeline: train a small boosted forest per heavy user, read off the
feature sets of root-to-leaf paths, rank those sets with tf-idf across
users to pick counting keys, materialize per-key impression/engagement
counts over a history window, and feed the joined counting features to
online and batch click predictors evaluated by relative cross entropy.
"""

from .core import (
    CountingKey,
    Dataset,
    FeatureDescriptor,
    FeatureSchema,
    Impression,
)
from .errors import PipelineError

__version__ = "0.1.0"

__all__ = [
    "CountingKey",
    "Dataset",
    "FeatureDescriptor",
    "FeatureSchema",
    "Impression",
    "PipelineError",
    "__version__",
]
