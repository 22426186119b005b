"""Benchmark aggregation: averaged metrics, degradation reports, %Chinese.

The averaged metric drives the performance response surface; degradation
reports compare a tuned model against its pre-trained base; the Chinese
fraction measures how much of a response is written in Han ideographs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

NORMALIZATIONS = ("none", "minmax")

# Han ideograph ranges counted by chinese_fraction: CJK Unified Ideographs
# and Extension A. Punctuation and kana are deliberately excluded.
_CJK_RANGES = ((0x4E00, 0x9FFF), (0x3400, 0x4DBF))


class AggregationError(ValueError):
    """Invalid aggregation spec or score map."""


@dataclass(frozen=True)
class AggregationSpec:
    """Which benchmarks enter the averaged metric, and how.

    ``bounds`` supplies per-benchmark (lo, hi) used only by minmax
    normalization. Weights, when given, must cover exactly the included
    benchmarks and sum to a positive value.
    """

    included_benchmarks: tuple[str, ...]
    normalization: str = "none"
    weights: dict[str, float] | None = None
    bounds: dict[str, tuple[float, float]] | None = None

    def __post_init__(self):
        if not self.included_benchmarks:
            raise AggregationError("included_benchmarks must be non-empty")
        if len(set(self.included_benchmarks)) != len(self.included_benchmarks):
            raise AggregationError("included_benchmarks must not repeat")
        if self.normalization not in NORMALIZATIONS:
            raise AggregationError(f"normalization must be one of {NORMALIZATIONS}")
        if self.weights is not None:
            if set(self.weights) != set(self.included_benchmarks):
                raise AggregationError("weights keys must equal included_benchmarks")
            if any(w < 0 for w in self.weights.values()):
                raise AggregationError("weights must be >= 0")
            if sum(self.weights.values()) <= 0:
                raise AggregationError("weights must sum to a positive value")

    def to_dict(self) -> dict:
        out: dict = {
            "included_benchmarks": list(self.included_benchmarks),
            "normalization": self.normalization,
        }
        if self.weights is not None:
            out["weights"] = dict(self.weights)
        if self.bounds is not None:
            out["bounds"] = {k: list(v) for k, v in self.bounds.items()}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AggregationSpec":
        bounds = d.get("bounds")
        return cls(
            included_benchmarks=tuple(d["included_benchmarks"]),
            normalization=d.get("normalization", "none"),
            weights=dict(d["weights"]) if d.get("weights") is not None else None,
            bounds={k: (v[0], v[1]) for k, v in bounds.items()} if bounds else None,
        )


@dataclass(frozen=True)
class DegradationRow:
    """Base-vs-tuned comparison for one benchmark."""

    benchmark: str
    base_score: float
    tuned_score: float
    delta: float
    degraded: bool

    def __post_init__(self):
        if self.delta != self.tuned_score - self.base_score:
            raise AggregationError("delta must equal tuned_score - base_score exactly")
        if self.degraded != (self.delta < 0):
            raise AggregationError("degraded flag inconsistent with delta")


@dataclass(frozen=True)
class DegradationReport:
    """Shared-benchmark rows plus the names each side could not compare."""

    rows: tuple[DegradationRow, ...]
    only_base: tuple[str, ...]
    only_tuned: tuple[str, ...]

    def to_dicts(self) -> list[dict]:
        return [
            {
                "benchmark": r.benchmark,
                "base_score": r.base_score,
                "tuned_score": r.tuned_score,
                "delta": r.delta,
                "degraded": r.degraded,
            }
            for r in self.rows
        ]


def average_metric(scores: dict[str, float], spec: AggregationSpec) -> float:
    """Aggregate the included benchmark scores into one scalar.

    With normalization "none" and no weights this is the arithmetic mean of
    the raw scores. Weights give a weighted mean; "minmax" first maps each
    score through (s - lo) / (hi - lo) using spec.bounds.
    """
    missing = [b for b in spec.included_benchmarks if b not in scores]
    if missing:
        raise AggregationError(f"missing benchmark(s): {missing}")

    values = []
    for name in spec.included_benchmarks:
        s = float(scores[name])
        if not math.isfinite(s):
            raise AggregationError(f"score for {name!r} must be finite, got {s!r}")
        if spec.normalization == "minmax":
            if not spec.bounds or name not in spec.bounds:
                raise AggregationError(f"minmax normalization needs bounds for {name!r}")
            lo, hi = spec.bounds[name]
            if hi == lo:
                raise AggregationError(f"degenerate minmax range for {name!r}: lo == hi")
            s = (s - lo) / (hi - lo)
        values.append(s)

    if spec.weights is None:
        return sum(values) / len(values)
    weights = [spec.weights[name] for name in spec.included_benchmarks]
    return sum(w * v for w, v in zip(weights, values)) / sum(weights)


def degradation_report(base: dict[str, float], tuned: dict[str, float]) -> DegradationReport:
    """Compare tuned scores against base scores benchmark by benchmark.

    Rows cover the shared benchmarks, ordered by delta ascending so the
    worst regressions come first; benchmarks present on only one side are
    reported as uncompared.
    """
    shared = sorted(set(base) & set(tuned))
    if not shared:
        raise AggregationError("no shared benchmarks between base and tuned score maps")
    rows = []
    for name in shared:
        delta = tuned[name] - base[name]
        rows.append(DegradationRow(
            benchmark=name,
            base_score=base[name],
            tuned_score=tuned[name],
            delta=delta,
            degraded=delta < 0,
        ))
    rows.sort(key=lambda r: (r.delta, r.benchmark))
    return DegradationReport(
        rows=tuple(rows),
        only_base=tuple(sorted(set(base) - set(tuned))),
        only_tuned=tuple(sorted(set(tuned) - set(base))),
    )


def chinese_fraction(text: str) -> float:
    """Fraction of Han-ideograph codepoints among non-whitespace codepoints.

    Total function: an empty string (or all-whitespace input) returns 0.
    """
    non_ws = 0
    cjk = 0
    for ch in text:
        if ch.isspace():
            continue
        non_ws += 1
        cp = ord(ch)
        if any(lo <= cp <= hi for lo, hi in _CJK_RANGES):
            cjk += 1
    return cjk / non_ws if non_ws else 0.0
