"""Evaluation metrics and the plain-text experiment report.

Cross entropy is the mean negative log likelihood in nats, with
predictions clipped away from 0 and 1 before taking logs.  Relative
cross entropy (RCE) rescales that against a constant predictor fixed at
the background engagement rate p:

    RCE = 100 * (1 - CE(model) / CE(p))
    CE(p) = -p ln p - (1 - p) ln(1 - p)

so 0 means "no better than the base rate" and positive is better.

Coverage and correlation follow the "present" flag that rides along
with joined counting features: coverage counts samples whose value is
present and non-zero, correlation is computed over present pairs only.

Reports round-trip exactly: floats are written with repr() and parsed
back with float(), so emit -> read -> emit is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateBaseline,
    EmptyInput,
    InsufficientData,
    IoFailure,
    MalformedRecord,
)

__all__ = [
    "cross_entropy",
    "rce",
    "coverage",
    "pearson",
    "BucketStat",
    "ExperimentReport",
    "format_report",
    "emit_report",
    "read_report",
]

_CLIP = 1e-15


def cross_entropy(preds: Sequence[float], labels: Sequence[int]) -> float:
    """Mean negative log likelihood in nats, clipped to avoid log(0)."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise EmptyInput("cross_entropy over zero impressions")
    if p.shape != y.shape:
        raise InsufficientData(f"{p.size} predictions vs {y.size} labels")
    p = np.clip(p, _CLIP, 1.0 - _CLIP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def rce(preds: Sequence[float], labels: Sequence[int], baseline_p: float) -> float:
    """Percent reduction in cross entropy against the constant predictor."""
    if not 0.0 < baseline_p < 1.0:
        raise DegenerateBaseline(f"baseline rate {baseline_p} not inside (0, 1)")
    ce_base = -(
        baseline_p * np.log(baseline_p)
        + (1.0 - baseline_p) * np.log1p(-baseline_p)
    )
    return 100.0 * (1.0 - cross_entropy(preds, labels) / float(ce_base))


def coverage(values: Sequence[float], present: Sequence[bool]) -> float:
    """Fraction of samples whose value is present and non-zero."""
    v = np.asarray(values, dtype=np.float64)
    m = np.asarray(present, dtype=bool)
    if v.size == 0:
        raise EmptyInput("coverage over zero samples")
    if v.shape != m.shape:
        raise InsufficientData(f"{v.size} values vs {m.size} flags")
    return float(np.mean(m & (v != 0.0)))


def pearson(
    values: Sequence[float], present: Sequence[bool], labels: Sequence[int]
) -> float | None:
    """Correlation with the label over present samples; None if constant."""
    v = np.asarray(values, dtype=np.float64)
    m = np.asarray(present, dtype=bool)
    y = np.asarray(labels, dtype=np.float64)
    if not (v.shape == m.shape == y.shape):
        raise InsufficientData("values, flags, and labels must align")
    a, b = v[m], y[m]
    if a.size < 2:
        raise InsufficientData(f"only {a.size} present pairs")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        return None
    return float((da * db).sum() / denom)


@dataclass(frozen=True)
class BucketStat:
    """Holdout quality over one time slice: bucket start, size, CE, RCE."""

    bucket: int
    n: int
    ce: float
    rce: float


@dataclass
class ExperimentReport:
    """Everything one evaluation run produces, ready for emit_report."""

    seed: int
    buckets: list[BucketStat] = field(default_factory=list)
    final_day_rce: float = 0.0
    total_holdout: int = 0
    coverage: dict = field(default_factory=dict)
    correlation: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_report(report: ExperimentReport) -> str:
    """Render to sectioned text; floats use repr so reads are lossless."""
    lines = ["[buckets]", "# bucket\tn\tce\trce"]
    for b in report.buckets:
        lines.append(f"{b.bucket}\t{b.n}\t{b.ce!r}\t{b.rce!r}")
    lines.append("")
    lines.append("[summary]")
    lines.append("# field = value")
    lines.append(f"seed = {report.seed}")
    lines.append(f"final_day_rce = {report.final_day_rce!r}")
    lines.append(f"total_holdout = {report.total_holdout}")
    lines.append(f"flags = {','.join(report.flags) if report.flags else 'none'}")
    for k in sorted(report.config):
        lines.append(f"config.{k} = {_fmt(report.config[k])}")
    lines.append("")
    lines.append("[coverage]")
    lines.append("# feature = fraction")
    for name, v in report.coverage.items():
        lines.append(f"{name} = {v!r}")
    lines.append("")
    lines.append("[correlation]")
    lines.append("# feature = pearson or undefined")
    for name, v in report.correlation.items():
        lines.append(f"{name} = {'undefined' if v is None else repr(v)}")
    return "\n".join(lines) + "\n"


def emit_report(report: ExperimentReport, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(format_report(report))
    except OSError as e:
        raise IoFailure(str(e)) from e


def read_report(path: str) -> ExperimentReport:
    report = ExperimentReport(seed=0)
    section = None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if line.startswith("[") and line.endswith("]"):
                    section = line[1:-1]
                    continue
                if section == "buckets":
                    parts = line.split("\t")
                    if len(parts) != 4:
                        raise MalformedRecord(path, line_no, "expected 4 bucket fields")
                    report.buckets.append(
                        BucketStat(
                            int(parts[0]), int(parts[1]),
                            float(parts[2]), float(parts[3]),
                        )
                    )
                    continue
                if "=" not in line:
                    raise MalformedRecord(path, line_no, "expected key = value")
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if section == "summary":
                    if key == "seed":
                        report.seed = int(value)
                    elif key == "final_day_rce":
                        report.final_day_rce = float(value)
                    elif key == "total_holdout":
                        report.total_holdout = int(value)
                    elif key == "flags":
                        report.flags = [] if value == "none" else value.split(",")
                    elif key.startswith("config."):
                        report.config[key[len("config."):]] = _parse_scalar(value)
                    else:
                        raise MalformedRecord(path, line_no, f"unknown field {key}")
                elif section == "coverage":
                    report.coverage[key] = float(value)
                elif section == "correlation":
                    report.correlation[key] = (
                        None if value == "undefined" else float(value)
                    )
                else:
                    raise MalformedRecord(path, line_no, "line outside any section")
    except OSError as e:
        raise IoFailure(str(e)) from e
    return report


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text
