"""Data model and persistence for continual pre-training experiments.

Holds the record types for CPT runs, corpus inventories, and the
(log10 LR, ALMR%) experiment grid, plus line-delimited ingestion and
serialization. All types are immutable after construction.
"""

from __future__ import annotations

import io
import json
import math
import statistics
import warnings
from dataclasses import dataclass, field

SCHEMA_VERSION = 1

STAGES = ("cpt", "sft", "dpo")
LR_SCHEDULERS = ("linear", "cosine", "constant")
LANGUAGE_CLASSES = ("base", "additional", "multilingual")

# Runs whose token budget strays this far (relative) from the median get flagged.
BUDGET_DEVIATION_WARN = 0.25


class LedgerError(ValueError):
    """Invalid record, inventory, or grid input."""


class IngestError(LedgerError):
    """One or more lines of a run stream failed validation.

    ``problems`` is a list of (line_number, message) pairs, 1-based.
    """

    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = list(problems)
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.problems)
        super().__init__(f"{len(self.problems)} invalid record(s): {lines}")


class GridError(LedgerError):
    """Run set cannot form a usable experiment grid."""


class BudgetWarning(UserWarning):
    """A run's token budget deviates strongly from the grid median."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, used for grid bounds and surface domains."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise LedgerError(f"degenerate rectangle: {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def padded(self, frac: float) -> "Rect":
        dx = self.width * frac
        dy = self.height * frac
        return Rect(self.xmin - dx, self.xmax + dx, self.ymin - dy, self.ymax + dy)

    def to_dict(self) -> dict:
        return {"xmin": self.xmin, "xmax": self.xmax, "ymin": self.ymin, "ymax": self.ymax}

    @classmethod
    def from_dict(cls, d: dict) -> "Rect":
        return cls(d["xmin"], d["xmax"], d["ymin"], d["ymax"])


def _check_finite(name: str, value: float) -> float:
    if not math.isfinite(value):
        raise LedgerError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class RunConfig:
    """Training configuration attached to a run record."""

    micro_batch_size: int
    global_batch_size: int
    lr_scheduler: str
    weight_decay: float
    sequence_length: int

    def __post_init__(self):
        if self.micro_batch_size <= 0:
            raise LedgerError("micro_batch_size must be > 0")
        if self.global_batch_size <= 0 or self.global_batch_size % self.micro_batch_size:
            raise LedgerError(
                "global_batch_size must be a positive multiple of micro_batch_size"
            )
        if self.lr_scheduler not in LR_SCHEDULERS:
            raise LedgerError(f"lr_scheduler must be one of {LR_SCHEDULERS}")
        if self.weight_decay < 0:
            raise LedgerError("weight_decay must be >= 0")
        if self.sequence_length <= 0:
            raise LedgerError("sequence_length must be > 0")

    def to_dict(self) -> dict:
        return {
            "micro_batch_size": self.micro_batch_size,
            "global_batch_size": self.global_batch_size,
            "lr_scheduler": self.lr_scheduler,
            "weight_decay": self.weight_decay,
            "sequence_length": self.sequence_length,
        }


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one CPT experiment at a given (ALMR%, LR) setting."""

    run_id: str
    stage: str
    almr_percent: float
    lr: float
    tokens_consumed: int
    val_loss: float
    metrics: dict[str, float]
    seed: int
    config: RunConfig

    def __post_init__(self):
        if not self.run_id:
            raise LedgerError("run_id must be non-empty")
        if self.stage not in STAGES:
            raise LedgerError(f"stage must be one of {STAGES}, got {self.stage!r}")
        _check_finite("almr_percent", self.almr_percent)
        if not 0.0 <= self.almr_percent <= 100.0:
            raise LedgerError(f"almr_percent must be in [0, 100], got {self.almr_percent}")
        _check_finite("lr", self.lr)
        if self.lr <= 0:
            raise LedgerError(f"lr must be > 0, got {self.lr}")
        if self.tokens_consumed < 0:
            raise LedgerError("tokens_consumed must be >= 0")
        _check_finite("val_loss", self.val_loss)
        if self.val_loss <= 0:
            raise LedgerError(f"val_loss must be > 0, got {self.val_loss}")
        for name, value in self.metrics.items():
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise LedgerError(f"metric {name!r} must be finite, got {value!r}")

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "run_id": self.run_id,
            "stage": self.stage,
            "almr_percent": self.almr_percent,
            "lr": self.lr,
            "tokens_consumed": self.tokens_consumed,
            "val_loss": self.val_loss,
            "metrics": dict(self.metrics),
            "seed": self.seed,
            "config": self.config.to_dict(),
        }


@dataclass(frozen=True)
class DatasetSpec:
    """One corpus entry of a stage inventory."""

    name: str
    stage: str
    language_class: str
    domain: str
    token_count: int

    def __post_init__(self):
        if not self.name:
            raise LedgerError("dataset name must be non-empty")
        if self.stage not in STAGES:
            raise LedgerError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.language_class not in LANGUAGE_CLASSES:
            raise LedgerError(
                f"language_class must be one of {LANGUAGE_CLASSES}, got {self.language_class!r}"
            )
        if self.token_count < 0:
            raise LedgerError(f"token_count must be >= 0, got {self.token_count}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "stage": self.stage,
            "language_class": self.language_class,
            "domain": self.domain,
            "token_count": self.token_count,
        }


@dataclass(frozen=True)
class CorpusInventory:
    """All datasets available to one training stage."""

    datasets: tuple[DatasetSpec, ...]
    stage: str

    def __post_init__(self):
        if not self.datasets:
            raise LedgerError("inventory must contain at least one dataset")
        if self.stage not in STAGES:
            raise LedgerError(f"stage must be one of {STAGES}, got {self.stage!r}")
        seen: set[tuple[str, str]] = set()
        for ds in self.datasets:
            if ds.stage != self.stage:
                raise LedgerError(
                    f"dataset {ds.name!r} has stage {ds.stage!r}, inventory is {self.stage!r}"
                )
            key = (ds.name, ds.stage)
            if key in seen:
                raise LedgerError(f"duplicate dataset {key!r} in inventory")
            seen.add(key)

    def by_class(self, language_class: str) -> tuple[DatasetSpec, ...]:
        return tuple(d for d in self.datasets if d.language_class == language_class)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "stage": self.stage,
            "datasets": [d.to_dict() for d in self.datasets],
        }


@dataclass(frozen=True)
class GridPoint:
    """One experiment in (log10 LR, ALMR%) coordinates."""

    x: float
    y: float
    loss: float
    metrics: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentGrid:
    """Scattered experiment points with their bounding box.

    Points are kept sorted by (x, y) so grids built from any permutation
    of the same runs compare equal.
    """

    points: tuple[GridPoint, ...]
    bounds: Rect

    def __post_init__(self):
        seen: set[tuple[float, float]] = set()
        for p in self.points:
            if (p.x, p.y) in seen:
                raise GridError(f"duplicate grid coordinates ({p.x}, {p.y})")
            seen.add((p.x, p.y))
            if not self.bounds.contains(p.x, p.y):
                raise GridError(f"point ({p.x}, {p.y}) outside declared bounds")

    @property
    def xs(self) -> tuple[float, ...]:
        return tuple(p.x for p in self.points)

    @property
    def ys(self) -> tuple[float, ...]:
        return tuple(p.y for p in self.points)

    def centroid(self) -> tuple[float, float]:
        n = len(self.points)
        return (sum(self.xs) / n, sum(self.ys) / n)


# ---------------------------------------------------------------------------
# Line-delimited run ingestion
# ---------------------------------------------------------------------------

_RUN_FIELDS = {
    "schema", "run_id", "stage", "almr_percent", "lr",
    "tokens_consumed", "val_loss", "metrics", "seed", "config",
}
_CONFIG_FIELDS = {
    "micro_batch_size", "global_batch_size", "lr_scheduler",
    "weight_decay", "sequence_length",
}


def _as_int(name: str, value) -> int:
    """Accept ints and integral floats (JSON has no integer literal for 100e9)."""
    if isinstance(value, bool):
        raise LedgerError(f"{name} must be an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise LedgerError(f"{name} must be an integer, got {value!r}")


def _as_real(name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise LedgerError(f"{name} must be a number, got {value!r}")
    return float(value)


def record_from_dict(obj: dict) -> RunRecord:
    """Build and validate a RunRecord from one parsed line object."""
    if not isinstance(obj, dict):
        raise LedgerError("record must be an object")
    unknown = set(obj) - _RUN_FIELDS
    if unknown:
        raise LedgerError(f"unknown field(s): {sorted(unknown)}")
    missing = _RUN_FIELDS - set(obj)
    if missing:
        raise LedgerError(f"missing field(s): {sorted(missing)}")
    if obj["schema"] != SCHEMA_VERSION:
        raise LedgerError(f"unsupported schema {obj['schema']!r}")
    cfg = obj["config"]
    if not isinstance(cfg, dict):
        raise LedgerError("config must be an object")
    unknown = set(cfg) - _CONFIG_FIELDS
    if unknown:
        raise LedgerError(f"unknown config field(s): {sorted(unknown)}")
    missing = _CONFIG_FIELDS - set(cfg)
    if missing:
        raise LedgerError(f"missing config field(s): {sorted(missing)}")
    metrics = obj["metrics"]
    if not isinstance(metrics, dict):
        raise LedgerError("metrics must be a map of benchmark name to score")
    config = RunConfig(
        micro_batch_size=_as_int("micro_batch_size", cfg["micro_batch_size"]),
        global_batch_size=_as_int("global_batch_size", cfg["global_batch_size"]),
        lr_scheduler=cfg["lr_scheduler"],
        weight_decay=_as_real("weight_decay", cfg["weight_decay"]),
        sequence_length=_as_int("sequence_length", cfg["sequence_length"]),
    )
    return RunRecord(
        run_id=obj["run_id"],
        stage=obj["stage"],
        almr_percent=_as_real("almr_percent", obj["almr_percent"]),
        lr=_as_real("lr", obj["lr"]),
        tokens_consumed=_as_int("tokens_consumed", obj["tokens_consumed"]),
        val_loss=_as_real("val_loss", obj["val_loss"]),
        metrics={k: _as_real(f"metrics[{k}]", v) for k, v in metrics.items()},
        seed=_as_int("seed", obj["seed"]),
        config=config,
    )


def _iter_lines(source) -> list[str]:
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    else:
        raise TypeError(f"unsupported source type {type(source)!r}")
    return text.splitlines()


def ingest_runs(source) -> list[RunRecord]:
    """Parse a line-delimited run stream into validated records.

    ``source`` may be a str, bytes, or a file-like object. Blank lines are
    skipped. Every invalid line is collected and reported together in a
    single IngestError carrying 1-based line numbers; a stream whose lines
    all validate returns the records in input order.
    """
    records: list[RunRecord] = []
    problems: list[tuple[int, str]] = []
    seen_ids: dict[str, int] = {}
    for lineno, line in enumerate(_iter_lines(source), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append((lineno, f"malformed line: {exc.msg}"))
            continue
        try:
            record = record_from_dict(obj)
        except LedgerError as exc:
            problems.append((lineno, str(exc)))
            continue
        if record.run_id in seen_ids:
            problems.append(
                (lineno, f"duplicate run_id {record.run_id!r} (first seen on line "
                         f"{seen_ids[record.run_id]})")
            )
            continue
        seen_ids[record.run_id] = lineno
        records.append(record)
    if problems:
        raise IngestError(problems)
    return records


def serialize_runs(records: list[RunRecord]) -> str:
    """Render records to the line-delimited format ingest_runs accepts.

    Keys are sorted so output bytes are stable for identical inputs.
    """
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


# ---------------------------------------------------------------------------
# Experiment grid
# ---------------------------------------------------------------------------

def build_grid(runs: list[RunRecord]) -> ExperimentGrid:
    """Map CPT runs onto (log10 LR, ALMR%) points with a min/max envelope.

    Raises GridError for non-CPT runs, fewer than 3 runs (no surface can be
    fitted downstream), or two runs landing on identical coordinates. Warns
    (BudgetWarning) when a run's token budget deviates more than 25% from
    the median budget.
    """
    if any(r.stage != "cpt" for r in runs):
        bad = [r.run_id for r in runs if r.stage != "cpt"]
        raise GridError(f"grid accepts only cpt runs; offending run_ids: {bad}")
    if len(runs) < 3:
        raise GridError(f"need at least 3 runs to build a grid, got {len(runs)}")

    coords: dict[tuple[float, float], str] = {}
    points = []
    for r in runs:
        x = math.log10(r.lr)
        key = (x, r.almr_percent)
        if key in coords:
            raise GridError(
                f"runs {coords[key]!r} and {r.run_id!r} share grid coordinates "
                f"(log10 lr={x}, almr={r.almr_percent})"
            )
        coords[key] = r.run_id
        points.append(GridPoint(x=x, y=r.almr_percent, loss=r.val_loss,
                                metrics=dict(r.metrics)))

    budgets = [r.tokens_consumed for r in runs]
    median = statistics.median(budgets)
    if median > 0:
        stray = [r.run_id for r in runs
                 if abs(r.tokens_consumed - median) > BUDGET_DEVIATION_WARN * median]
        if stray:
            warnings.warn(
                f"token budgets deviate >25% from median ({median:g}) for runs: {stray}",
                BudgetWarning,
                stacklevel=2,
            )

    points.sort(key=lambda p: (p.x, p.y))
    bounds = Rect(
        min(p.x for p in points), max(p.x for p in points),
        min(p.y for p in points), max(p.y for p in points),
    )
    return ExperimentGrid(points=tuple(points), bounds=bounds)


# ---------------------------------------------------------------------------
# Corpus inventory ingestion
# ---------------------------------------------------------------------------

_DATASET_FIELDS = {"name", "stage", "language_class", "domain", "token_count"}


def load_inventory(source) -> CorpusInventory:
    """Parse and validate a corpus inventory document.

    Expected shape: {"schema": 1, "stage": "cpt", "datasets": [...]} where
    each dataset entry carries name/language_class/domain/token_count and an
    optional stage defaulting to the header stage.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LedgerError(f"malformed inventory document: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise LedgerError("inventory document must be an object")
    if doc.get("schema") != SCHEMA_VERSION:
        raise LedgerError(f"unsupported schema {doc.get('schema')!r}")
    stage = doc.get("stage")
    entries = doc.get("datasets")
    if not isinstance(entries, list) or not entries:
        raise LedgerError("inventory must have a non-empty 'datasets' array")
    datasets = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise LedgerError(f"datasets[{i}] must be an object")
        unknown = set(entry) - _DATASET_FIELDS
        if unknown:
            raise LedgerError(f"datasets[{i}]: unknown field(s) {sorted(unknown)}")
        datasets.append(DatasetSpec(
            name=entry.get("name", ""),
            stage=entry.get("stage", stage),
            language_class=entry.get("language_class", ""),
            domain=entry.get("domain", ""),
            token_count=_as_int(f"datasets[{i}].token_count", entry.get("token_count", -1)),
        ))
    return CorpusInventory(datasets=tuple(datasets), stage=stage)
