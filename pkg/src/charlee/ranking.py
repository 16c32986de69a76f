"""Channel ranking and grouping.

Channels are scored per checkpoint prefix by summed inter-class centroid
distances, the per-checkpoint scores are min-max normalized and combined
with linearly decaying weights (1 down to ``w_last``), and channels are
dropped from the *highest* weighted score downward: a channel whose
discriminative power sits in the earliest slices has already paid off by
the time filtering starts, so it goes first.  The resulting keep-priority
order is computed once on training data and frozen for the run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data.core import Dataset, SliceSpec
from .errors import ConfigurationError, InputError


@dataclass
class ChannelRanking:
    per_checkpoint_scores: np.ndarray  # (N, C) raw scores
    weights: np.ndarray  # (N,)
    weighted_scores: np.ndarray  # (C,)
    keep_priority: np.ndarray  # (C,) channel indices, kept-longest first

    def ordinal_ranks(self) -> np.ndarray:
        """Rank position of each channel in drop order (0 = dropped first)."""
        order = self.keep_priority[::-1]
        ranks = np.empty_like(order)
        ranks[order] = np.arange(len(order))
        return ranks

    def to_json(self) -> str:
        payload = {
            "keep_priority": self.keep_priority.tolist(),
            "weighted_scores": self.weighted_scores.tolist(),
            "per_checkpoint_scores": self.per_checkpoint_scores.tolist(),
            "weights": self.weights.tolist(),
            "ordinal_ranks": self.ordinal_ranks().tolist(),
        }
        return json.dumps(payload, indent=2, sort_keys=True)


@dataclass
class GroupAssignment:
    n_groups: int
    group_of_channel: np.ndarray  # (C,) group id per original channel index
    group_sizes: np.ndarray  # (G,)

    def channels_of_group(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.group_of_channel == g)

    def to_json_obj(self) -> dict:
        return {
            "n_groups": int(self.n_groups),
            "group_of_channel": self.group_of_channel.tolist(),
            "group_sizes": self.group_sizes.tolist(),
        }


def centroid_scores(values: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-channel sum of pairwise Euclidean distances between class-mean series.

    values: (n, C, L) prefix of the dataset; higher score = more
    discriminative on this prefix.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise InputError("centroid scores need at least two classes")
    means = np.stack([values[labels == c].mean(axis=0) for c in classes])  # (K, C, L)
    k = len(classes)
    score = np.zeros(values.shape[1])
    for i in range(k):
        diff = means[i + 1:] - means[i]  # (K-i-1, C, L)
        score += np.sqrt((diff ** 2).sum(axis=2)).sum(axis=0)
    return score


def checkpoint_weights(n_checkpoints: int, w_last: float = 0.1) -> np.ndarray:
    """Linear decay from 1 at the first checkpoint to w_last at the last."""
    if n_checkpoints == 1:
        return np.array([1.0])
    return np.linspace(1.0, w_last, n_checkpoints)


def weighted_rank(dataset: Dataset, slice_spec: SliceSpec, w_last: float = 0.1) -> ChannelRanking:
    """Score every channel on each checkpoint prefix and combine.

    Prefix n covers the first n slices.  Raw scores are min-max normalized
    across channels per checkpoint before the weighted sum, since prefixes
    of different lengths give incomparable distance magnitudes.  Ties in
    the final scores break by original channel index, ascending.
    """
    n = slice_spec.n_checkpoints
    raw = np.zeros((n, dataset.n_channels))
    normed = np.zeros_like(raw)
    for ckpt in range(1, n + 1):
        end = slice_spec.prefix_end(ckpt)
        s = centroid_scores(dataset.values[:, :, :end], dataset.labels)
        raw[ckpt - 1] = s
        span = s.max() - s.min()
        normed[ckpt - 1] = (s - s.min()) / span if span > 0 else 0.0
    weights = checkpoint_weights(n, w_last)
    weighted = (weights[:, None] * normed).sum(axis=0)
    keep_priority = np.argsort(weighted, kind="stable")
    return ChannelRanking(raw, weights, weighted, keep_priority)


def group_channels(ranking: ChannelRanking, n_groups: int) -> GroupAssignment:
    """Assign contiguous keep-priority blocks to groups, sizes differing by <= 1.

    Group 0 is kept longest; remainder channels go to the lowest-index
    (kept-longest) groups.
    """
    c = len(ranking.keep_priority)
    if not 1 <= n_groups <= c:
        raise ConfigurationError(f"need 1 <= n_groups <= {c}, got {n_groups}")
    base, rem = divmod(c, n_groups)
    sizes = np.array([base + 1 if g < rem else base for g in range(n_groups)])
    group_of_channel = np.empty(c, dtype=np.int64)
    start = 0
    for g, size in enumerate(sizes):
        for ch in ranking.keep_priority[start:start + size]:
            group_of_channel[ch] = g
        start += size
    return GroupAssignment(n_groups, group_of_channel, sizes)


def default_group_count(n_channels: int) -> int:
    """Experiment default: min(C, 10)."""
    return min(n_channels, 10)
