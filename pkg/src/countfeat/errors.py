"""Exception types shared across the pipeline.

Everything raised on purpose by this package derives from PipelineError,
so callers (and the CLI) can separate data problems from genuine bugs.
"""

from __future__ import annotations

__all__ = [
    "PipelineError",
    "InvalidConfig",
    "IoFailure",
    "MalformedRecord",
    "SchemaMismatch",
    "DuplicateId",
    "UnknownFeature",
    "EmptyData",
    "DimensionMismatch",
    "DegenerateSplit",
    "OutOfOrderUpdate",
    "MissingKeys",
    "EmptyStream",
    "DivergedTraining",
    "EmptyInput",
    "InsufficientData",
    "DegenerateBaseline",
]


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class InvalidConfig(PipelineError):
    """A configuration value is out of its documented range."""


class IoFailure(PipelineError):
    """Reading or writing an artifact file failed."""


class MalformedRecord(PipelineError):
    """A line of an input file could not be parsed.

    Carries the 1-based line number so the offending record can be found.
    """

    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no
        self.reason = reason


class SchemaMismatch(PipelineError):
    """A record does not fit the declared feature schema."""


class DuplicateId(PipelineError):
    """Two impressions share the same id."""


class UnknownFeature(PipelineError):
    """A feature name is not present in the schema."""


class EmptyData(PipelineError):
    """An operation that needs at least one sample received none."""


class DimensionMismatch(PipelineError):
    """An input vector does not match the trained feature layout."""


class DegenerateSplit(PipelineError):
    """A binary split left one side empty."""


class OutOfOrderUpdate(PipelineError):
    """A streaming count update arrived before the table's window end."""


class MissingKeys(PipelineError):
    """A counting-key list required by this stage is empty."""


class EmptyStream(PipelineError):
    """The evaluation stream contains no impressions."""


class DivergedTraining(PipelineError):
    """Training loss became non-finite."""


class EmptyInput(PipelineError):
    """A metric received an empty prediction list."""


class InsufficientData(PipelineError):
    """Fewer data points than the statistic needs."""


class DegenerateBaseline(PipelineError):
    """Baseline CTR is exactly 0 or 1, so baseline entropy is zero."""
