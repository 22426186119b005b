"""Desk-scale analog of a continual-pretraining grid study.

Two synthetic "languages" are first-order Markov streams over a shared
32-symbol alphabet: language A lives on symbols 0-15, language B on 16-31,
each leaking 10% of its mass into the other range. A trainable bigram
logit table stands in for the language model; training it under different
(ALMR%, LR) settings produces RunRecords that exercise the full analysis
pipeline, exhibiting the same acquisition-vs-forgetting trade-off the
frontier method is built to navigate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .ledger import CorpusInventory, DatasetSpec, RunConfig, RunRecord
from .metrics import AggregationSpec, average_metric
from .mixture import plan as build_plan
from .mixture import sample_schedule

VOCAB_SIZE = 32
_BLOCK = 16              # symbols per language range
IN_RANGE_MASS = 0.9      # probability of staying in the language's own range
_DECAY = 0.5             # geometric decay over offsets from the favored successor
_BATCH = 64              # SGD minibatch, in bigram pairs

TOY_BENCHMARKS = ("acc_a", "acc_b")
TOY_AGGREGATION = AggregationSpec(included_benchmarks=TOY_BENCHMARKS)


class ToyTrainError(RuntimeError):
    """Training diverged; carries the failing step index."""

    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"step {step}: {message}")


@dataclass(frozen=True)
class ToyCorpus:
    """Token streams for both languages plus their generating matrices."""

    language_a: np.ndarray
    language_b: np.ndarray
    vocab_size: int
    matrix_a: np.ndarray
    matrix_b: np.ndarray

    def __post_init__(self):
        for name, seq in (("language_a", self.language_a), ("language_b", self.language_b)):
            if len(seq) and (seq.min() < 0 or seq.max() >= self.vocab_size):
                raise ValueError(f"{name} contains symbols outside [0, {self.vocab_size})")
        tv = 0.5 * np.abs(self.matrix_a - self.matrix_b).sum(axis=1)
        if tv.mean() <= 0.1:
            raise ValueError("generating matrices are too similar (mean TV <= 0.1)")


@dataclass
class ToyModel:
    """Bigram next-symbol model: one logit row per context symbol."""

    logits: np.ndarray

    def copy(self) -> "ToyModel":
        return ToyModel(logits=self.logits.copy())

    def probs(self) -> np.ndarray:
        shifted = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def loss(self, contexts: np.ndarray, targets: np.ndarray) -> float:
        """Mean next-symbol cross-entropy (nats) over (context, target) pairs."""
        rows = self.logits[contexts]
        shifted = rows - rows.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        return float((logz - shifted[np.arange(len(targets)), targets]).mean())

    def accuracy(self, contexts: np.ndarray, targets: np.ndarray) -> float:
        return float((self.logits[contexts].argmax(axis=1) == targets).mean())


@dataclass(frozen=True)
class TrainSpec:
    """One continual-training run's hyperparameters."""

    lr: float
    almr_percent: float
    token_budget: int
    lr_scheduler: str = "linear"
    seed: int = 0
    eval_holdout: int = 2000

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.almr_percent <= 100.0:
            raise ValueError(f"almr_percent must be in [0, 100], got {self.almr_percent}")
        if self.token_budget <= 0:
            raise ValueError("token_budget must be > 0")
        if self.lr_scheduler not in ("constant", "linear"):
            raise ValueError("lr_scheduler must be 'constant' or 'linear'")
        if self.eval_holdout <= 1:
            raise ValueError("eval_holdout must be > 1 (pairs come from consecutive tokens)")


def language_matrix(block_start: int, mult: int, add: int) -> np.ndarray:
    """Transition matrix concentrated on one 16-symbol range.

    From any context s the favored successor is block_start + (mult*s + add)
    mod 16; in-range probabilities decay geometrically with the cyclic
    offset from it (total IN_RANGE_MASS), and the other range shares the
    remaining mass uniformly.
    """
    m = np.zeros((VOCAB_SIZE, VOCAB_SIZE))
    offsets = np.arange(_BLOCK)
    decay = _DECAY ** offsets
    decay /= decay.sum()
    other_mass = (1.0 - IN_RANGE_MASS) / _BLOCK
    for s in range(VOCAB_SIZE):
        favored = (mult * s + add) % _BLOCK
        in_range = block_start + (favored + offsets) % _BLOCK
        m[s, in_range] = IN_RANGE_MASS * decay
        other = np.setdiff1d(np.arange(VOCAB_SIZE), np.arange(block_start, block_start + _BLOCK))
        m[s, other] = other_mass
    return m


MATRIX_A = language_matrix(0, 3, 1)
MATRIX_B = language_matrix(_BLOCK, 5, 2)


def _sample_chain(matrix: np.ndarray, start: int, n: int,
                  rng: np.random.Generator) -> np.ndarray:
    if n <= 0:
        return np.empty(0, dtype=np.int64)
    cum = matrix.cumsum(axis=1)
    uniforms = rng.random(n)
    out = np.empty(n, dtype=np.int64)
    state = start
    for i in range(n):
        state = int(np.searchsorted(cum[state], uniforms[i], side="right"))
        out[i] = min(state, VOCAB_SIZE - 1)
    return out


def synth_corpus(seed: int, tokens_per_language: int) -> ToyCorpus:
    """Generate both language streams deterministically from one seed."""
    rng = np.random.default_rng(seed)
    a = _sample_chain(MATRIX_A, 0, tokens_per_language, rng)
    b = _sample_chain(MATRIX_B, _BLOCK, tokens_per_language, rng)
    return ToyCorpus(language_a=a, language_b=b, vocab_size=VOCAB_SIZE,
                     matrix_a=MATRIX_A, matrix_b=MATRIX_B)


def _pairs_from(seq: np.ndarray, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return seq[positions], seq[positions + 1]


def _sgd_step(logits: np.ndarray, contexts: np.ndarray, targets: np.ndarray,
              lr: float) -> float:
    """One minibatch update in place; returns the pre-update batch loss."""
    rows = logits[contexts]
    shifted = rows - rows.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    loss = float((np.log(z[:, 0]) - shifted[np.arange(len(targets)), targets]).mean())
    grad = probs
    grad[np.arange(len(targets)), targets] -= 1.0
    np.add.at(logits, contexts, -(lr / len(targets)) * grad)
    return loss


def pretrain(corpus_a: np.ndarray, steps: int, lr: float, seed: int) -> ToyModel:
    """Train a fresh model on language A alone with constant-LR SGD.

    Minibatch positions are drawn deterministically from the seed. Raises
    ToyTrainError with the step index if the loss stops being finite.
    """
    if len(corpus_a) < 2:
        raise ValueError("corpus_a must contain at least 2 tokens")
    model = ToyModel(logits=np.zeros((VOCAB_SIZE, VOCAB_SIZE)))
    if steps <= 0:
        return model
    rng = np.random.default_rng(seed)
    positions = rng.integers(0, len(corpus_a) - 1, size=(steps, _BATCH))
    for step in range(steps):
        s, t = _pairs_from(corpus_a, positions[step])
        loss = _sgd_step(model.logits, s, t, lr)
        if not math.isfinite(loss):
            raise ToyTrainError(step, f"non-finite loss at lr={lr:g}")
    return model


def _toy_inventory(corpus: ToyCorpus, holdout: int) -> CorpusInventory:
    return CorpusInventory(
        stage="cpt",
        datasets=(
            DatasetSpec("language_a", "cpt", "base", "synthetic",
                        max(len(corpus.language_a) - holdout, 0)),
            DatasetSpec("language_b", "cpt", "additional", "synthetic",
                        max(len(corpus.language_b) - holdout, 0)),
        ),
    )


def cpt_run(base_model: ToyModel, corpus: ToyCorpus, spec: TrainSpec) -> RunRecord:
    """Continue training the base model on the scheduled A/B mixture.

    The token stream follows the mixture-planner schedule at the target
    ratio; each slot consumes one bigram pair from its language's own
    cursor (pairs never span languages). Validation loss is the
    ratio-weighted cross-entropy on the held-out tails of both languages,
    and the metrics are next-symbol accuracies plus their mean.
    """
    holdout = spec.eval_holdout
    train_a = corpus.language_a[:len(corpus.language_a) - holdout]
    train_b = corpus.language_b[:len(corpus.language_b) - holdout]
    if len(train_a) < 2 or len(train_b) < 2:
        raise ValueError("corpus too small for the requested eval_holdout")

    mix = build_plan(_toy_inventory(corpus, holdout), spec.almr_percent, spec.token_budget)
    schedule = sample_schedule(mix, batch_size=_BATCH, seed=spec.seed)
    flags = schedule.pool_flags(spec.token_budget)
    n_b = int(flags.sum())
    n_a = spec.token_budget - n_b

    # Seed-derived starting offsets stand in for document-order shuffling;
    # cursors then advance sequentially with wraparound over pair positions.
    rng = np.random.default_rng(spec.seed)
    off_a = int(rng.integers(0, len(train_a) - 1))
    off_b = int(rng.integers(0, len(train_b) - 1))
    pos_a = (off_a + np.arange(n_a)) % (len(train_a) - 1)
    pos_b = (off_b + np.arange(n_b)) % (len(train_b) - 1)

    contexts = np.empty(spec.token_budget, dtype=np.int64)
    targets = np.empty(spec.token_budget, dtype=np.int64)
    contexts[~flags], targets[~flags] = _pairs_from(train_a, pos_a)
    contexts[flags], targets[flags] = _pairs_from(train_b, pos_b)

    model = base_model.copy()
    steps = spec.token_budget // _BATCH
    for step in range(steps):
        lo = step * _BATCH
        lr_t = spec.lr * (1.0 - step / steps) if spec.lr_scheduler == "linear" else spec.lr
        loss = _sgd_step(model.logits, contexts[lo:lo + _BATCH],
                         targets[lo:lo + _BATCH], lr_t)
        if not math.isfinite(loss):
            raise ToyTrainError(step, f"non-finite loss at lr={spec.lr:g}")

    hold_a = corpus.language_a[len(corpus.language_a) - holdout:]
    hold_b = corpus.language_b[len(corpus.language_b) - holdout:]
    sa, ta = hold_a[:-1], hold_a[1:]
    sb, tb = hold_b[:-1], hold_b[1:]
    ratio = spec.almr_percent / 100.0
    val_loss = (1.0 - ratio) * model.loss(sa, ta) + ratio * model.loss(sb, tb)
    metrics = {
        "acc_a": model.accuracy(sa, ta),
        "acc_b": model.accuracy(sb, tb),
    }
    metrics["acc_mean"] = average_metric(metrics, TOY_AGGREGATION)
    return RunRecord(
        run_id=f"toy-almr{spec.almr_percent:g}-lr{spec.lr:g}-seed{spec.seed}",
        stage="cpt",
        almr_percent=spec.almr_percent,
        lr=spec.lr,
        tokens_consumed=steps * _BATCH,
        val_loss=val_loss,
        metrics=metrics,
        seed=spec.seed,
        config=RunConfig(
            micro_batch_size=_BATCH, global_batch_size=_BATCH,
            lr_scheduler=spec.lr_scheduler, weight_decay=0.0, sequence_length=2,
        ),
    )


def cell_seed(template_seed: int, row: int, col: int) -> int:
    """Stable per-cell seed; Python's hash() is salted, so mix explicitly."""
    h = template_seed & 0xFFFFFFFFFFFFFFFF
    for v in (row, col):
        h ^= (v + 0x9E3779B97F4A7C15 + ((h << 6) & 0xFFFFFFFFFFFFFFFF) + (h >> 2))
        h &= 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class CellFailure:
    """A grid cell whose training run raised, kept for reporting."""

    lr_index: int
    almr_index: int
    lr: float
    almr_percent: float
    message: str


@dataclass(frozen=True)
class GridRunResult:
    records: tuple[RunRecord, ...]
    failures: tuple[CellFailure, ...]

    @property
    def total_cells(self) -> int:
        return len(self.records) + len(self.failures)


def run_grid(almr_levels: list[float], lr_levels: list[float], base: ToyModel,
             corpus: ToyCorpus, template_spec: TrainSpec) -> GridRunResult:
    """One independent run per (LR, ALMR) cell, row-major with LR outermost.

    Cells are seeded from the template seed and their indices, so results
    do not depend on execution order. Divergent cells are collected as
    failures instead of aborting the grid.
    """
    for name, levels in (("almr_levels", almr_levels), ("lr_levels", lr_levels)):
        if not levels:
            raise ValueError(f"{name} must be non-empty")
        if len(set(levels)) != len(levels):
            raise ValueError(f"{name} must be distinct")
    records: list[RunRecord] = []
    failures: list[CellFailure] = []
    for i, lr in enumerate(lr_levels):
        for j, almr in enumerate(almr_levels):
            spec = replace(template_spec, lr=lr, almr_percent=almr,
                           seed=cell_seed(template_spec.seed, i, j))
            try:
                records.append(cpt_run(base, corpus, spec))
            except ToyTrainError as exc:
                failures.append(CellFailure(
                    lr_index=i, almr_index=j, lr=lr, almr_percent=almr,
                    message=str(exc),
                ))
    return GridRunResult(records=tuple(records), failures=tuple(failures))
