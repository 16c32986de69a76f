"""POMDP environment accounting: quantized filter actions, utilization
tracking, cost/savings/reward arithmetic, and search-space counters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvariantViolation, StateError


@dataclass
class ActionOutcome:
    """One filter decision: the raw Beta draw and what it snapped to."""

    raw_sample: float
    product: float
    snapped_fraction: float
    stopped: bool = False


@dataclass
class RewardBreakdown:
    r_class: float
    r_savings: float
    delta: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = (1.0 - self.delta) * self.r_class + self.delta * self.r_savings

    def as_dict(self) -> dict:
        return {"r_class": self.r_class, "r_savings": self.r_savings,
                "delta": self.delta, "total": self.total}


def quantized_set(group_sizes, n_channels: int) -> np.ndarray:
    """Reachable utilization fractions: 0 plus each cumulative group size / C."""
    sizes = np.asarray(group_sizes, dtype=np.int64)
    if sizes.sum() != n_channels:
        raise InvariantViolation(f"group sizes {sizes.tolist()} do not sum to {n_channels}")
    fractions = np.concatenate([[0.0], np.cumsum(sizes) / n_channels])
    return np.sort(fractions)


def apply_filter_action(kept: float, raw_sample: float, qset) -> float:
    """Scale the Beta draw by the current kept fraction and snap to the grid.

    Ties between two equally near grid points resolve toward the smaller
    fraction (more savings).  The result can never exceed ``kept``.
    """
    qset = np.asarray(qset, dtype=np.float64)
    if not np.any(np.isclose(qset, kept, atol=1e-9)):
        raise InvariantViolation(f"current kept fraction {kept} is not in the quantized set")
    if not 0.0 <= raw_sample <= 1.0:
        raise DomainError(f"raw sample {raw_sample} outside [0, 1]")
    product = raw_sample * kept
    dist = np.abs(qset - product)
    best = dist.min()
    candidates = qset[dist <= best + 1e-12]
    return float(candidates.min())


def inference_cost(utilization, slice_weights=None) -> float:
    """Sum of per-slice kept fractions; optionally weighted per slice."""
    u = np.asarray(utilization, dtype=np.float64)
    w = np.ones_like(u) if slice_weights is None else np.asarray(slice_weights, dtype=np.float64)
    return float((u * w).sum())


def savings_fraction(utilization, n_slices: int | None = None) -> float:
    u = np.asarray(utilization, dtype=np.float64)
    s = len(u) if n_slices is None else n_slices
    return (s - inference_cost(u)) / s


def savings_reward(cost: float, n_slices: int) -> float:
    """Map cost in [1, S] linearly onto a reward in [+1, -1]."""
    if not 1.0 - 1e-9 <= cost <= n_slices + 1e-9:
        raise InvariantViolation(f"cost {cost} outside [1, {n_slices}]")
    if n_slices == 1:
        return 1.0
    return 1.0 - 2.0 * (cost - 1.0) / (n_slices - 1.0)


def total_reward(correct: bool, cost: float, n_slices: int, delta: float) -> RewardBreakdown:
    if not 0.0 <= delta <= 1.0:
        raise DomainError(f"delta {delta} outside [0, 1]")
    return RewardBreakdown(
        r_class=1.0 if correct else -1.0,
        r_savings=savings_reward(cost, n_slices),
        delta=delta,
    )


class Episode:
    """Mutable per-sample episode: records the utilization vector slice by slice.

    The first slice is always fully observed.  Each checkpoint's action
    outcome sets the next slice's fraction; the episode ends when the
    fraction hits zero, a stop fires, or no slices remain.
    """

    def __init__(self, n_slices: int, qset):
        if n_slices < 2:
            raise InvariantViolation("an episode needs at least two slices")
        self.n_slices = n_slices
        self.qset = np.asarray(qset, dtype=np.float64)
        self.utilization = np.zeros(n_slices)
        self.utilization[0] = 1.0
        self.slices_observed = 1
        self.terminal = False
        self.stop_checkpoint: int | None = None

    @property
    def kept(self) -> float:
        return float(self.utilization[self.slices_observed - 1])

    @property
    def checkpoint(self) -> int:
        """1-based index of the pending checkpoint."""
        return self.slices_observed

    def step(self, outcome: ActionOutcome) -> bool:
        """Apply one checkpoint decision; returns True if the episode ended."""
        if self.terminal:
            raise StateError("step on a terminal episode")
        n = self.checkpoint
        if outcome.stopped or outcome.snapped_fraction <= 0.0:
            self.terminal = True
            self.stop_checkpoint = n
            return True
        if outcome.snapped_fraction > self.kept + 1e-9:
            raise InvariantViolation(
                f"snapped fraction {outcome.snapped_fraction} exceeds kept fraction {self.kept}"
            )
        self.utilization[self.slices_observed] = outcome.snapped_fraction
        self.slices_observed += 1
        if self.slices_observed == self.n_slices:
            self.terminal = True
        return self.terminal

    def cost(self) -> float:
        return inference_cost(self.utilization)

    def savings(self) -> float:
        return savings_fraction(self.utilization, self.n_slices)


def count_paths_unconstrained(n_channels: int, n_timesteps: int) -> int:
    """Size of the unconstrained per-timestep channel-subset search space:
    (sum_i C-choose-i)^T = (2^C)^T."""
    if n_channels < 1 or n_timesteps < 1:
        raise DomainError("need at least one channel and one timestep")
    per_step = sum(math.comb(n_channels, i) for i in range(n_channels + 1))
    assert per_step == 2 ** n_channels
    return per_step ** n_timesteps


def count_paths_constrained(n_groups: int, n_checkpoints: int) -> int:
    """Number of non-increasing kept-group sequences k_1 >= ... >= k_N, k in {0..G}.

    Dynamic program over (position, current cap).
    """
    if n_groups < 1 or n_checkpoints < 1:
        raise DomainError("need at least one group and one checkpoint")
    # counts[k] = number of valid suffixes starting with a value <= k
    counts = [1] * (n_groups + 1)
    for _ in range(n_checkpoints - 1):
        nxt = [0] * (n_groups + 1)
        running = 0
        for k in range(n_groups + 1):
            running += counts[k]
            nxt[k] = running
        counts = nxt
    return sum(counts)
