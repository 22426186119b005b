"""Token-quota planning and deterministic interleaving for corpus mixtures.

A plan converts a target additional-language ratio and a token budget into
per-dataset quotas (largest-remainder rounding, so quotas always sum to the
budget); a schedule realizes the ratio slot by slot with error diffusion,
keeping every prefix within one slot of the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ledger import CorpusInventory

# Datasets drawn more often than this many passes get flagged: repeated
# epochs over the same corpus are a known quality risk.
PASS_WARN_THRESHOLD = 4.0


class PlanError(ValueError):
    """Mixture plan cannot be built from the given inventory and target."""


@dataclass(frozen=True)
class MixturePlan:
    """Per-dataset token quotas realizing a target additional-language ratio."""

    target_almr_percent: float
    total_tokens: int
    quotas: dict[str, int]
    passes: dict[str, float]
    warnings: tuple[str, ...]
    additional_datasets: tuple[str, ...]
    base_datasets: tuple[str, ...]

    def __post_init__(self):
        if sum(self.quotas.values()) != self.total_tokens:
            raise PlanError("quotas must sum exactly to total_tokens")
        if any(q < 0 for q in self.quotas.values()):
            raise PlanError("quotas must be >= 0")

    @property
    def additional_quota(self) -> int:
        return sum(self.quotas[name] for name in self.additional_datasets)

    def to_dict(self) -> dict:
        return {
            "target_almr_percent": self.target_almr_percent,
            "total_tokens": self.total_tokens,
            "quotas": dict(self.quotas),
            "passes": dict(self.passes),
            "warnings": list(self.warnings),
            "additional_datasets": list(self.additional_datasets),
            "base_datasets": list(self.base_datasets),
        }


def _largest_remainder(weights: list[float], total: int) -> list[int]:
    """Split ``total`` into integer parts proportional to ``weights``.

    Uses largest-remainder rounding, so the parts always sum to exactly
    ``total``. All-zero weights are treated as uniform.
    """
    if total == 0:
        return [0] * len(weights)
    wsum = sum(weights)
    if wsum <= 0:
        weights = [1.0] * len(weights)
        wsum = float(len(weights))
    exact = [w * total / wsum for w in weights]
    parts = [math.floor(e) for e in exact]
    shortfall = total - sum(parts)
    # Ties broken by position so the split is deterministic.
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - parts[i]), i))
    for i in order[:shortfall]:
        parts[i] += 1
    return parts


def plan(inventory: CorpusInventory, almr_percent: float, total_tokens: int) -> MixturePlan:
    """Build token quotas for a target additional-language percentage.

    The additional pool gets round(ratio * total) tokens split among
    additional-class datasets proportional to their sizes; base and
    multilingual datasets share the remainder the same way. Pass counts
    above PASS_WARN_THRESHOLD produce warnings.
    """
    if not 0.0 <= almr_percent <= 100.0:
        raise PlanError(f"almr_percent must be in [0, 100], got {almr_percent}")
    if total_tokens <= 0:
        raise PlanError(f"total_tokens must be > 0, got {total_tokens}")
    additional = inventory.by_class("additional")
    base = inventory.by_class("base") + inventory.by_class("multilingual")
    if almr_percent > 0 and not additional:
        raise PlanError("target ratio > 0 but inventory has no additional-language dataset")
    if almr_percent < 100 and not base:
        raise PlanError("target ratio < 100 but inventory has no base-language dataset")

    ratio = almr_percent / 100.0
    additional_total = round(ratio * total_tokens)
    base_total = total_tokens - additional_total

    quotas: dict[str, int] = {}
    for pool, pool_total in ((additional, additional_total), (base, base_total)):
        parts = _largest_remainder([float(d.token_count) for d in pool], pool_total)
        for ds, part in zip(pool, parts):
            quotas[ds.name] = part

    passes: dict[str, float] = {}
    warnings: list[str] = []
    for ds in additional + base:
        quota = quotas[ds.name]
        if ds.token_count > 0:
            passes[ds.name] = quota / ds.token_count
        else:
            passes[ds.name] = math.inf if quota > 0 else 0.0
            if quota > 0:
                warnings.append(f"dataset {ds.name!r} has zero tokens but a nonzero quota")
        if passes[ds.name] > PASS_WARN_THRESHOLD:
            warnings.append(
                f"dataset {ds.name!r} would be repeated {passes[ds.name]:.2f} times "
                f"(> {PASS_WARN_THRESHOLD:g} passes)"
            )
    return MixturePlan(
        target_almr_percent=almr_percent,
        total_tokens=total_tokens,
        quotas=quotas,
        passes=passes,
        warnings=tuple(warnings),
        additional_datasets=tuple(d.name for d in additional),
        base_datasets=tuple(d.name for d in base),
    )


class _PoolInterleaver:
    """Largest-remainder error diffusion over one pool's dataset quotas.

    Integer accumulators (scaled by the pool total) keep the per-dataset
    draw counts within one slot of proportionality, with ties broken by
    dataset order.
    """

    def __init__(self, names: tuple[str, ...], quotas: dict[str, int]):
        self.names = names
        self.weights = [quotas.get(n, 0) for n in names]
        self.total = sum(self.weights)
        self.acc = [0] * len(names)

    def next_name(self) -> str:
        if len(self.names) == 1:
            return self.names[0]
        best = 0
        for i, w in enumerate(self.weights):
            self.acc[i] += w
            if self.acc[i] > self.acc[best]:
                best = i
        self.acc[best] -= max(self.total, 1)
        return self.names[best]


class Schedule:
    """Deterministic slot sequence realizing a plan's target ratio.

    Every generating method restarts from slot zero, so repeated calls
    (and repeated processes) see identical sequences. The seed is recorded
    for document-order shuffling downstream; it never changes which pool
    or dataset a slot is assigned to.
    """

    def __init__(self, plan: MixturePlan, batch_size: int = 1, seed: int = 0):
        if batch_size < 1:
            raise PlanError(f"batch_size must be >= 1, got {batch_size}")
        self.plan = plan
        self.batch_size = batch_size
        self.seed = seed
        # Exact rational form of the target fraction: the accumulator adds
        # num/den per slot and fires when it reaches 1, with no float drift.
        ratio = plan.target_almr_percent / 100.0
        self._num, self._den = float(ratio).as_integer_ratio()

    def pool_flags(self, n_slots: int) -> np.ndarray:
        """Boolean array, True where a slot belongs to the additional pool."""
        if n_slots < 0:
            raise PlanError("n_slots must be >= 0")
        flags = np.empty(n_slots, dtype=bool)
        acc = 0
        num, den = self._num, self._den
        for k in range(n_slots):
            acc += num
            if acc >= den:
                acc -= den
                flags[k] = True
            else:
                flags[k] = False
        return flags

    def slots(self, n_slots: int) -> list[str]:
        """Dataset name per token slot, from slot zero."""
        flags = self.pool_flags(n_slots)
        add_pool = _PoolInterleaver(self.plan.additional_datasets, self.plan.quotas)
        base_pool = _PoolInterleaver(self.plan.base_datasets, self.plan.quotas)
        return [add_pool.next_name() if f else base_pool.next_name() for f in flags]

    def batches(self, n_batches: int) -> list[list[str]]:
        names = self.slots(n_batches * self.batch_size)
        return [names[i * self.batch_size:(i + 1) * self.batch_size]
                for i in range(n_batches)]

    def run_length_encoded(self, n_slots: int) -> list[tuple[str, int]]:
        """Compress the slot sequence to (dataset, repeat) pairs."""
        out: list[tuple[str, int]] = []
        for name in self.slots(n_slots):
            if out and out[-1][0] == name:
                out[-1] = (name, out[-1][1] + 1)
            else:
                out.append((name, 1))
        return out


def sample_schedule(plan: MixturePlan, batch_size: int = 1, seed: int = 0) -> Schedule:
    """Build the deterministic interleaving schedule for a plan."""
    return Schedule(plan, batch_size=batch_size, seed=seed)


def realized_ratio(schedule: Schedule, prefix_len: int) -> float:
    """Additional-pool share of the first ``prefix_len`` slots."""
    if prefix_len < 1:
        raise PlanError(f"prefix_len must be >= 1, got {prefix_len}")
    flags = schedule.pool_flags(prefix_len)
    return int(flags.sum()) / prefix_len
