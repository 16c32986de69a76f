"""Trainable components.

* grouped incremental convolutional encoder with running pooled statistics
  (max, min, mean, proportion of positives, mean of positives, mean of
  positive indexes), updated slice by slice with a raw-input tail cache so
  the result is identical to a one-pass causal convolution of the prefix;
* the Beta filter head, sigmoid stop head and baseline value head;
* a compact convolutional classifier operating on masked full-shape input.

The encoder is co-optimized with the filter policy: gradients flow from
the filter loss through the pooled statistics into the group kernels.
The classifier is a separate network; its gradients never reach the
encoder because it consumes raw masked values, not tape tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError
from .numerics.optim import ParamStore
from .numerics.rng import RngStream
from .numerics.tape import (
    Tensor,
    concat,
    conv1d_forward,
    dense_forward,
    global_avg_pool,
    maximum,
    minimum,
    mul,
    narrow,
    relu,
    reshape,
    sigmoid,
    softplus,
    tmax,
    tmin,
    tsum,
    where,
)
from .ranking import GroupAssignment

N_STATS = 6


@dataclass
class ModelConfig:
    n_channels: int
    n_timesteps: int
    n_classes: int
    n_checkpoints: int
    n_groups: int
    kernels_per_group: int = 8
    kernel_len: int = 9
    policy_hidden: int = 64
    classifier_maps: int = 32
    classifier_kernel: int = 9

    @property
    def state_dim(self) -> int:
        return self.n_groups * self.kernels_per_group * N_STATS + self.n_checkpoints + 1

    def to_json_obj(self) -> dict:
        return {k: getattr(self, k) for k in (
            "n_channels", "n_timesteps", "n_classes", "n_checkpoints", "n_groups",
            "kernels_per_group", "kernel_len", "policy_hidden",
            "classifier_maps", "classifier_kernel")}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def _dense_stack(store: ParamStore, prefix: str, dims: list[int], rng: RngStream) -> None:
    for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        store.glorot(f"{prefix}.w{i}", (n_out, n_in), n_in, n_out, rng)
        store.zeros(f"{prefix}.b{i}", (n_out,))


def init_params(cfg: ModelConfig, assignment: GroupAssignment, seed: int) -> ParamStore:
    """Create every trainable tensor with Glorot-uniform weights, zero biases."""
    rng = RngStream(seed, "init")
    store = ParamStore()
    k, klen = cfg.kernels_per_group, cfg.kernel_len
    for g in range(cfg.n_groups):
        gsize = int(assignment.group_sizes[g])
        store.glorot(f"encoder.g{g}.kernels", (k, gsize, klen), gsize * klen, k * klen, rng)
        store.zeros(f"encoder.g{g}.bias", (k,))
    h = cfg.policy_hidden
    _dense_stack(store, "filter", [cfg.state_dim, h, h, 2], rng)
    # Start the filter head biased toward keeping input: dropped groups are
    # gone for good, so the untrained policy must not decay fractions to
    # zero before the classifier can tell which input is worth keeping.
    # raw (3, -1) -> alpha ~4.0, beta ~1.3, action mean ~0.75, with a
    # quarter of the draws above the snap-to-everything boundary.
    store["filter.b2"].values[:] = (3.0, -1.0)
    _dense_stack(store, "stop", [cfg.state_dim + 1, h, h, 1], rng)
    _dense_stack(store, "baseline", [cfg.state_dim, h, h, 1], rng)
    m, ck = cfg.classifier_maps, cfg.classifier_kernel
    store.glorot("classifier.conv0.kernels", (m, cfg.n_channels, ck), cfg.n_channels * ck, m * ck, rng)
    store.zeros("classifier.conv0.bias", (m,))
    store.glorot("classifier.conv1.kernels", (m, m, ck), m * ck, m * ck, rng)
    store.zeros("classifier.conv1.bias", (m,))
    store.glorot("classifier.out.w", (cfg.n_classes, m), m, cfg.n_classes, rng)
    store.zeros("classifier.out.b", (cfg.n_classes,))
    return store


def _mlp(store: ParamStore, prefix: str, x: Tensor, n_layers: int = 3) -> Tensor:
    h = x
    for i in range(n_layers):
        h = dense_forward(h, store[f"{prefix}.w{i}"], store[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            h = relu(h)
    return h


class EncoderState:
    """Running statistics of the grouped causal convolution over a batch.

    Accumulators that carry gradients (max, min, sum, positive-value sum)
    are tape tensors; purely counting statistics (positive counts,
    positive-index sums, timestep counts) are plain arrays because their
    gradient is zero almost everywhere.
    """

    def __init__(self, cfg: ModelConfig, assignment: GroupAssignment, batch: int):
        self.cfg = cfg
        self.assignment = assignment
        self.batch = batch
        k = cfg.kernels_per_group
        neg = np.full((batch, k), -np.inf)
        pos = np.full((batch, k), np.inf)
        self.vmax = [Tensor(neg.copy()) for _ in range(cfg.n_groups)]
        self.vmin = [Tensor(pos.copy()) for _ in range(cfg.n_groups)]
        self.vsum = [Tensor(np.zeros((batch, k))) for _ in range(cfg.n_groups)]
        self.possum = [Tensor(np.zeros((batch, k))) for _ in range(cfg.n_groups)]
        self.poscount = [np.zeros((batch, k)) for _ in range(cfg.n_groups)]
        self.posidxsum = [np.zeros((batch, k)) for _ in range(cfg.n_groups)]
        self.counts = [np.zeros(batch, dtype=np.int64) for _ in range(cfg.n_groups)]
        self.tail = [np.zeros((batch, int(assignment.group_sizes[g]), cfg.kernel_len - 1))
                     for g in range(cfg.n_groups)]

    def encode_slice(self, params: ParamStore, slice_values: np.ndarray, t0: int,
                     active: np.ndarray) -> None:
        """Fold one time slice into the running statistics.

        slice_values: (B, C, L) raw (already normalized) input for this slice.
        t0: absolute timestep index of the slice start.
        active: (B, G) boolean; groups with no active sample are skipped
        entirely (no convolution work at all).  For partially active
        groups the convolution runs on the whole batch and frozen rows are
        masked back to their previous statistics, which leaves both their
        values and their gradient paths untouched.
        """
        b, _, length = slice_values.shape
        if length == 0:
            raise InputError("encode_slice: empty slice")
        if b != self.batch:
            raise ConfigurationError("encode_slice: batch size mismatch")
        active = np.asarray(active, dtype=bool).reshape(b, self.cfg.n_groups)
        klen = self.cfg.kernel_len
        for g in range(self.cfg.n_groups):
            rows = active[:, g]
            if not rows.any():
                continue
            channels = self.assignment.channels_of_group(g)
            xg = np.concatenate([self.tail[g], slice_values[:, channels, :]], axis=2)
            out = conv1d_forward(Tensor(xg), params[f"encoder.g{g}.kernels"],
                                 bias=params[f"encoder.g{g}.bias"], padding="valid")
            rows_col = rows[:, None]
            self.vmax[g] = where(rows_col, maximum(self.vmax[g], tmax(out, axis=2)), self.vmax[g])
            self.vmin[g] = where(rows_col, minimum(self.vmin[g], tmin(out, axis=2)), self.vmin[g])
            self.vsum[g] = where(rows_col, self.vsum[g] + tsum(out, axis=2), self.vsum[g])
            self.possum[g] = where(rows_col, self.possum[g] + tsum(relu(out), axis=2), self.possum[g])
            positive = out.values > 0
            self.poscount[g] = np.where(rows_col, self.poscount[g] + positive.sum(axis=2), self.poscount[g])
            idx = np.arange(t0, t0 + length, dtype=np.float64)
            self.posidxsum[g] = np.where(
                rows_col, self.posidxsum[g] + (positive * idx).sum(axis=2), self.posidxsum[g])
            self.counts[g] = np.where(rows, self.counts[g] + length, self.counts[g])
            new_tail = xg[:, :, -(klen - 1):]
            self.tail[g] = np.where(rows[:, None, None], new_tail, self.tail[g])

    def derived_stats(self, g: int) -> list:
        """Six (B, K) statistics for group g, in documented order:
        max, min, mean, ppv, mean of positives, mean of positive indexes
        (the last normalized by the series length)."""
        counts = np.maximum(self.counts[g], 1).astype(np.float64)[:, None]
        mean = mul(self.vsum[g], 1.0 / counts)
        ppv = Tensor(self.poscount[g] / counts)
        has_pos = self.poscount[g] > 0
        inv_pos = np.where(has_pos, 1.0 / np.maximum(self.poscount[g], 1.0), 0.0)
        mean_pos = where(has_pos, mul(self.possum[g], inv_pos), Tensor(np.zeros_like(inv_pos)))
        mean_pos_idx = Tensor(
            np.where(has_pos, self.posidxsum[g] * inv_pos, 0.0) / self.cfg.n_timesteps)
        return [self.vmax[g], self.vmin[g], mean, ppv, mean_pos, mean_pos_idx]

    def state_vector(self, history: np.ndarray, checkpoint: int) -> Tensor:
        """Assemble the policy observation at a checkpoint.

        history: (B, N) snapped fractions chosen so far, zero placeholders
        for future checkpoints.  checkpoint: 1-based index, appended as the
        fraction checkpoint / N.
        """
        if not 1 <= checkpoint <= self.cfg.n_checkpoints:
            raise ConfigurationError(f"checkpoint {checkpoint} out of range")
        parts = []
        for g in range(self.cfg.n_groups):
            parts.extend(self.derived_stats(g))
        parts.append(Tensor(np.asarray(history, dtype=np.float64).reshape(self.batch, -1)))
        parts.append(Tensor(np.full((self.batch, 1), checkpoint / self.cfg.n_checkpoints)))
        return concat(parts, axis=1)


def filter_policy_forward(params: ParamStore, state: Tensor) -> tuple[Tensor, Tensor]:
    """Beta parameters (alpha, beta), each softplus(raw) + 1 >= 1."""
    raw = _mlp(params, "filter", state)
    alpha = reshape(softplus(narrow(raw, 1, 0, 1)) + 1.0, (-1,))
    beta = reshape(softplus(narrow(raw, 1, 1, 1)) + 1.0, (-1,))
    return alpha, beta


def stop_policy_forward(params: ParamStore, state_values: np.ndarray,
                        snapped_fraction: np.ndarray) -> Tensor:
    """Deterministic stop probability from the (detached) state and the
    fraction the filter head just chose.  Gradients reach only the stop
    parameters."""
    state_values = np.asarray(state_values, dtype=np.float64)
    x = Tensor(np.concatenate(
        [state_values, np.asarray(snapped_fraction, dtype=np.float64).reshape(-1, 1)], axis=1))
    return reshape(sigmoid(_mlp(params, "stop", x)), (-1,))


def baseline_forward(params: ParamStore, state_values: np.ndarray) -> Tensor:
    """State-value estimate; input detached, gradients only to baseline head."""
    x = Tensor(np.asarray(state_values, dtype=np.float64))
    return reshape(_mlp(params, "baseline", x), (-1,))


def classifier_forward(params: ParamStore, masked_values: np.ndarray) -> Tensor:
    """Class logits from a masked full-shape (B, C, T) sample batch.

    Two convolution blocks with relu, global average pooling, dense output.
    """
    x = np.asarray(masked_values, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != params["classifier.conv0.kernels"].values.shape[1]:
        raise InputError(f"classifier_forward: bad input shape {x.shape}")
    h = relu(conv1d_forward(Tensor(x), params["classifier.conv0.kernels"],
                            bias=params["classifier.conv0.bias"], padding="same"))
    h = relu(conv1d_forward(h, params["classifier.conv1.kernels"],
                            bias=params["classifier.conv1.bias"], padding="same"))
    pooled = global_avg_pool(h)
    return dense_forward(pooled, params["classifier.out.w"], params["classifier.out.b"])
