"""Dataset container and the core observation-shaping operations:
normalization, splitting, truncation, slice boundaries, and masking."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, InputError, InvariantViolation
from ..numerics.rng import RngStream


@dataclass
class Dataset:
    """Equal-length multivariate series with integer class labels.

    values: (n_samples, n_channels, n_timesteps) float64
    labels: (n_samples,) int64 in [0, n_classes)
    """

    values: np.ndarray
    labels: np.ndarray
    n_classes: int
    channel_names: list[str] = field(default_factory=list)
    label_names: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 3:
            raise InputError(f"dataset values must be 3-D, got shape {self.values.shape}")
        if len(self.labels) != self.values.shape[0]:
            raise InputError("label count does not match sample count")
        if self.n_classes < 2:
            raise InputError("dataset needs at least 2 classes")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InputError("labels out of range")
        if not self.channel_names:
            self.channel_names = [f"c{i}" for i in range(self.values.shape[1])]
        if not self.label_names:
            self.label_names = [str(i) for i in range(self.n_classes)]

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def n_timesteps(self) -> int:
        return self.values.shape[2]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.values[idx], self.labels[idx], self.n_classes,
                       list(self.channel_names), list(self.label_names), dict(self.metadata))


@dataclass
class SliceSpec:
    """Partition of [0, T) into n_checkpoints + 1 contiguous slices."""

    n_checkpoints: int
    boundaries: list[tuple[int, int]]

    def __post_init__(self):
        if len(self.boundaries) != self.n_checkpoints + 1:
            raise ConfigurationError("slice spec needs exactly n_checkpoints + 1 intervals")
        prev_end = 0
        for start, end in self.boundaries:
            if start != prev_end or end <= start:
                raise ConfigurationError(f"slice intervals must be contiguous and nonempty: {self.boundaries}")
            prev_end = end

    @property
    def n_slices(self) -> int:
        return self.n_checkpoints + 1

    @property
    def n_timesteps(self) -> int:
        return self.boundaries[-1][1]

    def lengths(self) -> list[int]:
        return [end - start for start, end in self.boundaries]

    def prefix_end(self, n_slices: int) -> int:
        """Last timestep (exclusive) after observing the first n_slices slices."""
        return self.boundaries[n_slices - 1][1]


def slice_boundaries(n_timesteps: int, n_checkpoints: int) -> SliceSpec:
    """Split T timesteps into N+1 slices, as equal as possible.

    Remainder timesteps go to the earliest slices, which are always
    observed anyway.
    """
    if n_checkpoints < 1:
        raise ConfigurationError("need at least one checkpoint")
    s = n_checkpoints + 1
    if n_timesteps < s:
        raise ConfigurationError(f"cannot split {n_timesteps} timesteps into {s} nonempty slices")
    base, rem = divmod(n_timesteps, s)
    lengths = [base + 1 if i < rem else base for i in range(s)]
    bounds = []
    start = 0
    for length in lengths:
        bounds.append((start, start + length))
        start += length
    return SliceSpec(n_checkpoints, bounds)


def znormalize(dataset: Dataset) -> Dataset:
    """Per sample, per channel: subtract mean, divide by std.

    Channels with std below 1e-8 become all-zero, so the post-normalization
    mask value 0 is indistinguishable from "no signal".
    """
    v = dataset.values
    mean = v.mean(axis=2, keepdims=True)
    std = v.std(axis=2, keepdims=True)
    flat = std < 1e-8
    out = np.where(flat, 0.0, (v - mean) / np.where(flat, 1.0, std))
    return Dataset(out, dataset.labels, dataset.n_classes,
                   list(dataset.channel_names), list(dataset.label_names),
                   {**dataset.metadata, "znormalized": True})


def split_train_val(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified random split; classes with < 2 samples stay in train."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError("validation fraction must be in (0, 1)")
    rng = RngStream(seed, "split")
    val_idx = []
    for cls in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == cls)
        if len(members) < 2:
            if len(members):
                warnings.warn(f"class {cls} has < 2 samples; keeping all in train")
            continue
        order = members[rng.permutation(len(members))]
        n_val = min(int(round(fraction * len(members))), len(members) - 1)
        val_idx.extend(order[:n_val].tolist())
    val_mask = np.zeros(dataset.n_samples, dtype=bool)
    val_mask[val_idx] = True
    return dataset.subset(~val_mask), dataset.subset(val_mask)


def truncate(dataset: Dataset, fraction: float) -> Dataset:
    """Keep the first ceil(fraction * T) timesteps of every sample."""
    if not 0.0 < fraction <= 1.0:
        raise InputError("truncation fraction must be in (0, 1]")
    t = dataset.n_timesteps
    keep = int(np.ceil(fraction * t))
    if keep >= t:
        return dataset
    return Dataset(dataset.values[:, :, :keep].copy(), dataset.labels, dataset.n_classes,
                   list(dataset.channel_names), list(dataset.label_names),
                   {**dataset.metadata, "truncated_to": keep})


def kept_channel_counts(fractions: np.ndarray, group_of_channel: np.ndarray) -> np.ndarray:
    """Map utilization fractions to kept-channel counts (exact grid points)."""
    c = len(group_of_channel)
    return np.rint(np.asarray(fractions, dtype=np.float64) * c).astype(np.int64)


def keep_matrix(schedule, group_of_channel) -> np.ndarray:
    """(n_slices,) fractions -> (n_slices, C) boolean keep mask.

    A channel is kept while the cumulative size of its group and all
    higher-priority groups fits inside the kept-channel budget.
    """
    group_of_channel = np.asarray(group_of_channel, dtype=np.int64)
    n_groups = group_of_channel.max() + 1
    sizes = np.bincount(group_of_channel, minlength=n_groups)
    cum_through_group = np.cumsum(sizes)  # kept count needed to include group g
    budget = kept_channel_counts(schedule, group_of_channel)  # (S,)
    return cum_through_group[group_of_channel][None, :] <= budget[:, None]


def group_activity(fractions: np.ndarray, group_sizes: np.ndarray) -> np.ndarray:
    """(B,) kept fractions -> (B, G) booleans: is group g still observed."""
    sizes = np.asarray(group_sizes, dtype=np.int64)
    cum = np.cumsum(sizes)
    budget = np.rint(np.asarray(fractions, dtype=np.float64) * sizes.sum()).astype(np.int64)
    return cum[None, :] <= budget[:, None]


def mask_apply_batch(values: np.ndarray, schedules: np.ndarray, slice_spec: SliceSpec,
                     group_of_channel, mask_value: float = 0.0) -> np.ndarray:
    """Vectorized masking: (B, C, T) values with per-sample (B, S) schedules."""
    values = np.asarray(values, dtype=np.float64)
    schedules = np.asarray(schedules, dtype=np.float64)
    group_of_channel = np.asarray(group_of_channel, dtype=np.int64)
    sizes = np.bincount(group_of_channel, minlength=group_of_channel.max() + 1)
    cum_through_group = np.cumsum(sizes)
    budget = np.rint(schedules * len(group_of_channel)).astype(np.int64)  # (B, S)
    keep = cum_through_group[group_of_channel][None, None, :] <= budget[:, :, None]  # (B, S, C)
    slice_of_t = np.empty(slice_spec.n_timesteps, dtype=np.int64)
    for s, (a, b) in enumerate(slice_spec.boundaries):
        slice_of_t[a:b] = s
    keep_bct = keep[:, slice_of_t, :].transpose(0, 2, 1)  # (B, C, T)
    return np.where(keep_bct, values, mask_value)


def mask_apply(sample: np.ndarray, schedule, slice_spec: SliceSpec,
               group_of_channel, mask_value: float = 0.0) -> np.ndarray:
    """Mask a (C, T) sample according to a per-slice utilization schedule.

    Dropped groups are overwritten from their drop slice onward; everything
    after a stop (fraction 0) is masked.  Observed entries are unchanged
    and the output always has the full C x T shape.
    """
    sample = np.asarray(sample, dtype=np.float64)
    schedule = np.asarray(schedule, dtype=np.float64)
    if len(schedule) != slice_spec.n_slices:
        raise InvariantViolation("schedule length must equal the slice count")
    if np.any(np.diff(schedule) > 1e-12):
        raise InvariantViolation(f"utilization schedule must be non-increasing: {schedule}")
    keep = keep_matrix(schedule, group_of_channel)  # (S, C)
    out = np.full_like(sample, mask_value)
    for s, (start, end) in enumerate(slice_spec.boundaries):
        out[keep[s], start:end] = sample[keep[s], start:end]
    return out
