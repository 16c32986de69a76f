"""End-to-end training.

Rollouts run with the stop head disabled: an episode ends only when the
filter action hits fraction zero or the slices run out.  The terminal
reward is discounted back to every checkpoint, a learned baseline is
subtracted, and five loss terms are summed with unit weights:

    total = classification + full-sample + filter + baseline + stop

After every epoch the model is scored on the validation split with the
inference-mode policy (stop head active, Beta mean action) and the
parameters with the best mean validation reward are kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data.core import Dataset, SliceSpec, group_activity, mask_apply_batch, slice_boundaries, split_train_val, znormalize
from .episode import RewardBreakdown, quantized_set, savings_reward, total_reward
from .errors import ConfigurationError, NumericFailure
from .models import EncoderState, ModelConfig, baseline_forward, classifier_forward, filter_policy_forward, init_params, stop_policy_forward
from .numerics.optim import AdamState, FrozenParams, ParamStore, adam_step
from .numerics.rng import RngStream
from .numerics.special import beta_log_prob
from .numerics.tape import Tensor, binary_cross_entropy, softmax_cross_entropy, tmean, tsum
from .ranking import GroupAssignment, default_group_count, group_channels, weighted_rank


@dataclass
class TrainConfig:
    delta: float
    n_checkpoints: int = 3
    n_groups: int | None = None  # default: min(C, 10)
    w_last: float = 0.1
    gamma: float = 0.99
    epochs: int = 100
    minibatch: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.2
    mask_value: float = 0.0
    noise_std: float = 0.1  # recorded for synthetic runs; generator consumes it
    # Actor parameters (filter head + encoder) learn slower than the
    # classifier/critic so the policy cannot commit to dropping input
    # before the classifier knows what the input is worth.
    actor_lr_scale: float = 0.05
    # Soft bounds on the Beta shape parameters: dropping is irreversible
    # under the monotone-utilization constraint, so confidence toward
    # low fractions (beta) is bounded much tighter than toward keeping
    # (alpha); beyond the bound a quadratic hinge pulls back.
    beta_shape_bound: float = 3.2
    alpha_shape_bound: float = 12.0
    shape_penalty: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError("delta must be in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must be in (0, 1]")


@dataclass
class Trajectory:
    """Everything recorded while rolling one sample through an episode."""

    states: list
    raw_samples: list
    alphas: list
    betas: list
    log_probs: list
    fractions: list
    intermediate_predictions: list
    intermediate_costs: list
    final_prediction: int
    reward: RewardBreakdown
    label: int
    utilization: np.ndarray


def returns(final_reward: float, n_checkpoints_used: int, gamma: float) -> np.ndarray:
    """Discounted terminal reward propagated to each checkpoint."""
    if not 0.0 < gamma <= 1.0:
        raise ConfigurationError("gamma must be in (0, 1]")
    powers = np.arange(n_checkpoints_used - 1, -1, -1, dtype=np.float64)
    return final_reward * gamma ** powers


def loss_filter(log_probs, returns_vec, baselines) -> Tensor:
    """Policy-gradient surrogate: -sum log pi * (return - baseline).

    The advantage is a constant; gradients flow only through the log
    probabilities (into the filter head and the encoder).
    """
    advantages = np.asarray(returns_vec, dtype=np.float64) - np.asarray(baselines, dtype=np.float64)
    out = None
    for lp, a in zip(log_probs, advantages):
        term = tsum(lp * (-np.asarray(a, dtype=np.float64)))
        out = term if out is None else out + term
    return out


def loss_baseline(baselines: Tensor, returns_vec) -> Tensor:
    diff = baselines - np.asarray(returns_vec, dtype=np.float64)
    return tmean(diff * diff)


def stop_labels(r_stop) -> np.ndarray:
    """1 where the reward of exiting now strictly beats every later entry.

    The last entry of the sequence is labelled 1 (no future to beat).
    The trainer feeds one entry per reached checkpoint plus, when the
    episode ran through the final slice, the terminal episode reward as
    the closing entry, so "keep going" is always a competing option for
    classes whose information arrives after the last checkpoint.
    """
    r = np.asarray(r_stop, dtype=np.float64)
    n = len(r)
    labels = np.zeros(n, dtype=np.int64)
    labels[-1] = 1
    for i in range(n - 1):
        labels[i] = 1 if r[i] > r[i + 1:].max() else 0
    return labels


def loss_stop(stop_outputs: Tensor, labels) -> Tensor:
    return tmean(binary_cross_entropy(stop_outputs, np.asarray(labels, dtype=np.float64)))


def loss_classification(params, masked_final: np.ndarray, full_sample: np.ndarray,
                        label: int) -> tuple[Tensor, Tensor | None, int]:
    """Cross entropy on the episode's masked input, plus cross entropy on
    the unfiltered sample when the masked prediction was wrong."""
    logits = classifier_forward(params, masked_final[None])
    prediction = int(np.argmax(logits.values[0]))
    l_acc = tmean(softmax_cross_entropy(logits, [label]))
    l_full = None
    if prediction != label:
        l_full = tmean(softmax_cross_entropy(classifier_forward(params, full_sample[None]), [label]))
    return l_acc, l_full, prediction


@dataclass
class RunContext:
    """Frozen per-run structure: slicing, ranking, grouping, quantized actions."""

    model: ModelConfig
    assignment: GroupAssignment
    slice_spec: SliceSpec
    qset: np.ndarray
    ranking_json: str = ""

    @classmethod
    def build(cls, dataset: Dataset, config: TrainConfig) -> "RunContext":
        spec = slice_boundaries(dataset.n_timesteps, config.n_checkpoints)
        ranking = weighted_rank(dataset, spec, config.w_last)
        n_groups = config.n_groups or default_group_count(dataset.n_channels)
        assignment = group_channels(ranking, n_groups)
        model = ModelConfig(
            n_channels=dataset.n_channels,
            n_timesteps=dataset.n_timesteps,
            n_classes=dataset.n_classes,
            n_checkpoints=config.n_checkpoints,
            n_groups=n_groups,
        )
        qset = quantized_set(assignment.group_sizes, dataset.n_channels)
        return cls(model, assignment, spec, qset, ranking.to_json())


def _snap_batch(products: np.ndarray, qset: np.ndarray) -> np.ndarray:
    """Vectorized nearest-grid snap; ties resolve to the smaller fraction."""
    dist = np.abs(qset[None, :] - products[:, None])
    best = dist.min(axis=1, keepdims=True)
    return qset[np.argmax(dist <= best + 1e-12, axis=1)]


class BatchRollout:
    """Lockstep rollout of a minibatch of training episodes.

    Episodes that terminate early (fraction zero) simply stop contributing
    to later checkpoints via validity masks.
    """

    def __init__(self, params, ctx: RunContext, values: np.ndarray, labels: np.ndarray,
                 config: TrainConfig, rng: RngStream, record_graph: bool = True):
        self.params = params
        self.ctx = ctx
        self.values = values
        self.labels = labels
        self.config = config
        self.rng = rng
        self.record_graph = record_graph
        self.batch = values.shape[0]
        n = ctx.model.n_checkpoints
        s = ctx.slice_spec.n_slices
        self.schedules = np.zeros((self.batch, s))
        self.schedules[:, 0] = 1.0
        self.valid = np.zeros((self.batch, n), dtype=bool)  # checkpoint reached
        self.log_probs: list[Tensor] = []
        self.state_values: list[np.ndarray] = []
        self.alpha_tensors: list[Tensor] = []
        self.beta_tensors: list[Tensor] = []
        self.alphas: list[np.ndarray] = []
        self.betas: list[np.ndarray] = []
        self.raw_samples: list[np.ndarray] = []
        self.fractions: list[np.ndarray] = []
        self.inter_correct = np.zeros((self.batch, n), dtype=bool)
        self.inter_predictions = np.zeros((self.batch, n), dtype=np.int64)
        self.inter_costs = np.zeros((self.batch, n))
        self.n_used = np.zeros(self.batch, dtype=np.int64)

    def run(self) -> None:
        ctx, cfg = self.ctx, self.config
        n = ctx.model.n_checkpoints
        frozen = FrozenParams(self.params) if isinstance(self.params, ParamStore) else self.params
        encoder = EncoderState(ctx.model, ctx.assignment, self.batch)
        history = np.zeros((self.batch, n))
        kept = np.ones(self.batch)
        running = np.ones(self.batch, dtype=bool)
        for ckpt in range(1, n + 1):
            a, b = ctx.slice_spec.boundaries[ckpt - 1]
            active = group_activity(kept, ctx.assignment.group_sizes) & running[:, None]
            encoder.encode_slice(self.params, self.values[:, :, a:b], a, active)
            # classifier result if the episode stopped right here (no gradients)
            inter_sched = self.schedules.copy()
            inter_sched[:, ckpt:] = 0.0
            inter_masked = mask_apply_batch(self.values, inter_sched, ctx.slice_spec,
                                            ctx.assignment.group_of_channel, cfg.mask_value)
            inter_logits = classifier_forward(frozen, inter_masked).values
            self.inter_predictions[:, ckpt - 1] = inter_logits.argmax(axis=1)
            self.inter_correct[:, ckpt - 1] = self.inter_predictions[:, ckpt - 1] == self.labels
            self.inter_costs[:, ckpt - 1] = inter_sched.sum(axis=1)
            self.valid[:, ckpt - 1] = running
            self.n_used[running] = ckpt

            state = encoder.state_vector(history, ckpt)
            if not self.record_graph:
                state = Tensor(state.values)
            alpha, beta = filter_policy_forward(self.params, state)
            draws = np.clip(self.rng.beta(alpha.values, beta.values), 1e-6, 1 - 1e-6)
            log_prob = beta_log_prob(draws, alpha, beta)
            snapped = _snap_batch(draws * kept, ctx.qset)
            snapped = np.where(running, snapped, 0.0)

            self.state_values.append(state.values.copy())
            self.alpha_tensors.append(alpha)
            self.beta_tensors.append(beta)
            self.alphas.append(alpha.values.copy())
            self.betas.append(beta.values.copy())
            self.raw_samples.append(draws)
            self.log_probs.append(log_prob)
            self.fractions.append(snapped)

            history[:, ckpt - 1] = snapped
            self.schedules[:, ckpt] = snapped
            running = running & (snapped > 0.0)
            kept = np.where(running, snapped, 0.0)
        self.final_masked = mask_apply_batch(self.values, self.schedules, ctx.slice_spec,
                                             ctx.assignment.group_of_channel, cfg.mask_value)

    def finalize(self):
        """Final classification, rewards, per-checkpoint returns."""
        logits = classifier_forward(self.params, self.final_masked)
        self.final_logits = logits
        self.final_predictions = logits.values.argmax(axis=1)
        self.correct = self.final_predictions == self.labels
        self.costs = self.schedules.sum(axis=1)
        s = self.ctx.slice_spec.n_slices
        self.rewards = np.array([
            total_reward(bool(c), cost, s, self.config.delta).total
            for c, cost in zip(self.correct, self.costs)
        ])
        n = self.ctx.model.n_checkpoints
        ckpt_index = np.arange(1, n + 1)[None, :]
        exponent = np.maximum(self.n_used[:, None] - ckpt_index, 0)
        self.returns_matrix = self.rewards[:, None] * self.config.gamma ** exponent  # (B, N)

    def stop_label_matrix(self) -> np.ndarray:
        """Per-sample stop labels over the checkpoints actually reached.

        Episodes that observed the final slice contribute their terminal
        episode reward as the sequence's closing entry (not trained on,
        but competing); episodes ended by a zero fraction classify at
        their last checkpoint, so that entry closes the sequence itself.
        Requires finalize().
        """
        labels = np.zeros_like(self.inter_costs, dtype=np.float64)
        s = self.ctx.slice_spec.n_slices
        delta = self.config.delta
        for i in range(self.batch):
            used = self.n_used[i]
            if used == 0:
                continue
            r_stop = [
                (1.0 - delta) * (1.0 if self.inter_correct[i, k] else -1.0)
                + delta * savings_reward(self.inter_costs[i, k], s)
                for k in range(used)
            ]
            # The terminal episode reward closes every sequence: for
            # episodes that observed the final slice it is a distinct
            # competing outcome; for filter exits it ties with the exit
            # checkpoint (same region, same cost), labelling it 0.
            r_stop.append(self.rewards[i])
            labels[i, :used] = stop_labels(r_stop)[:used]
        return labels


def rollout_minibatch_losses(params: ParamStore, ctx: RunContext, values, labels,
                             config: TrainConfig, rng: RngStream) -> tuple[dict, BatchRollout]:
    """Run a minibatch and assemble the five loss tensors."""
    roll = BatchRollout(params, ctx, values, labels, config, rng)
    roll.run()
    roll.finalize()
    b = roll.batch
    n = ctx.model.n_checkpoints

    l_acc = tmean(softmax_cross_entropy(roll.final_logits, labels))

    wrong = ~roll.correct
    if wrong.any():
        full_ce = softmax_cross_entropy(classifier_forward(params, values[wrong]), labels[wrong])
        l_full = tsum(full_ce) * (1.0 / b)
    else:
        l_full = Tensor(0.0)

    # filter + baseline, masked to reached checkpoints
    valid = roll.valid.astype(np.float64)
    n_valid = valid.sum()
    l_filter = Tensor(0.0)
    l_baseline = Tensor(0.0)
    stop_outputs = []
    from .numerics.tape import relu as _relu

    for k in range(n):
        baseline_k = baseline_forward(params, roll.state_values[k])
        adv = (roll.returns_matrix[:, k] - baseline_k.values) * valid[:, k]
        l_filter = l_filter + tsum(roll.log_probs[k] * (-adv)) * (1.0 / b)
        over_b = _relu(roll.beta_tensors[k] - config.beta_shape_bound) * valid[:, k]
        over_a = _relu(roll.alpha_tensors[k] - config.alpha_shape_bound) * valid[:, k]
        l_filter = l_filter + (tsum(over_b * over_b) + tsum(over_a * over_a)) * (config.shape_penalty / b)
        diff = (baseline_k - roll.returns_matrix[:, k]) * valid[:, k]
        l_baseline = l_baseline + tsum(diff * diff) * (1.0 / max(n_valid, 1.0))
        stop_outputs.append(stop_policy_forward(params, roll.state_values[k], roll.fractions[k]))

    stop_label_mat = roll.stop_label_matrix()
    l_stop = Tensor(0.0)
    for k in range(n):
        bce = binary_cross_entropy(stop_outputs[k], stop_label_mat[:, k]) * valid[:, k]
        l_stop = l_stop + tsum(bce) * (1.0 / max(n_valid, 1.0))

    losses = {"acc": l_acc, "full": l_full, "filter": l_filter,
              "baseline": l_baseline, "stop": l_stop}
    return losses, roll


def run_episode_train(sample: np.ndarray, label: int, params: ParamStore, ctx: RunContext,
                      config: TrainConfig, rng: RngStream) -> Trajectory:
    """Single-sample training rollout (stop head disabled), for inspection
    and tests; the trainer itself uses the batched equivalent."""
    roll = BatchRollout(params, ctx, np.asarray(sample)[None], np.asarray([label]), config, rng)
    roll.run()
    roll.finalize()
    used = int(roll.n_used[0])
    breakdown = total_reward(bool(roll.correct[0]), float(roll.costs[0]),
                             ctx.slice_spec.n_slices, config.delta)
    return Trajectory(
        states=[roll.state_values[k][0] for k in range(used)],
        raw_samples=[float(roll.raw_samples[k][0]) for k in range(used)],
        alphas=[float(roll.alphas[k][0]) for k in range(used)],
        betas=[float(roll.betas[k][0]) for k in range(used)],
        log_probs=[float(roll.log_probs[k].values[0]) for k in range(used)],
        fractions=[float(roll.fractions[k][0]) for k in range(used)],
        intermediate_predictions=[int(roll.inter_predictions[0, k]) for k in range(used)],
        intermediate_costs=[float(roll.inter_costs[0, k]) for k in range(used)],
        final_prediction=int(roll.final_predictions[0]),
        reward=breakdown,
        label=int(label),
        utilization=roll.schedules[0].copy(),
    )


@dataclass
class TrainResult:
    best_params: dict
    last_params: dict
    history: list[dict]
    ctx: RunContext
    best_epoch: int
    best_val_reward: float
    config: TrainConfig
    adam: AdamState = field(repr=False, default=None)


def _epoch_row(epoch, sums, counts, val_metrics):
    row = {"epoch": epoch}
    for key in ("acc", "full", "filter", "baseline", "stop"):
        row[f"loss_{key}"] = sums[key] / counts
    row.update(val_metrics)
    return row


def train(dataset: Dataset, config: TrainConfig, ctx: RunContext | None = None,
          start_epoch: int = 0, params: ParamStore | None = None,
          adam: AdamState | None = None, best_state: tuple | None = None,
          history: list | None = None) -> TrainResult:
    """Full training loop with validation-based model selection.

    The dataset is normalized internally; ranking and grouping are
    computed once on the training split and frozen.  Resume support:
    pass the saved params/adam/best state and a start epoch, and the
    per-epoch derived RNG streams make the continuation identical to an
    uninterrupted run.
    """
    from . import evaluation  # local import; evaluation never imports training at module load

    normalized = znormalize(dataset)
    train_ds, val_ds = split_train_val(normalized, config.val_fraction, config.seed)
    if ctx is None:
        ctx = RunContext.build(train_ds, config)
    if params is None:
        params = init_params(ctx.model, ctx.assignment, config.seed)
    if adam is None:
        adam = AdamState(params, learning_rate=config.learning_rate,
                         lr_multipliers={"filter.": config.actor_lr_scale,
                                         "encoder.": config.actor_lr_scale})
    history = history if history is not None else []
    best_val, best_epoch, best_params = (-np.inf, -1, params.state_dict()) if best_state is None else best_state

    for epoch in range(start_epoch, config.epochs):
        shuffle_rng = RngStream(config.seed, "shuffle", epoch)
        beta_rng = RngStream(config.seed, "beta", epoch)
        order = shuffle_rng.permutation(train_ds.n_samples)
        sums = {k: 0.0 for k in ("acc", "full", "filter", "baseline", "stop")}
        n_batches = 0
        for start in range(0, len(order), config.minibatch):
            idx = order[start:start + config.minibatch]
            losses, _ = rollout_minibatch_losses(
                params, ctx, train_ds.values[idx], train_ds.labels[idx], config, beta_rng)
            total = losses["acc"] + losses["full"] + losses["filter"] + losses["baseline"] + losses["stop"]
            if not np.isfinite(total.values):
                raise NumericFailure(
                    f"non-finite loss at epoch {epoch}: "
                    + ", ".join(f"{k}={float(v.values):.4g}" for k, v in losses.items()))
            total.backward()
            adam_step(params, adam)
            for k, v in losses.items():
                sums[k] += float(v.values)
            n_batches += 1

        frozen = FrozenParams(params)
        val_report = evaluation.evaluate_arrays(frozen, ctx, val_ds.values, val_ds.labels, config.delta)
        val_metrics = {"val_reward": val_report["mean_reward"],
                       "val_f1": val_report["macro_f1"],
                       "val_savings": val_report["mean_savings"]}
        history.append(_epoch_row(epoch, sums, max(n_batches, 1), val_metrics))
        if val_metrics["val_reward"] > best_val:
            best_val = val_metrics["val_reward"]
            best_epoch = epoch
            best_params = params.state_dict()

    return TrainResult(best_params=best_params, last_params=params.state_dict(),
                       history=history, ctx=ctx, best_epoch=best_epoch,
                       best_val_reward=float(best_val), config=config, adam=adam)


def train_classifier_supervised(train_ds: Dataset, val_ds: Dataset, seed: int,
                                epochs: int = 30, minibatch: int = 32,
                                learning_rate: float = 1e-3) -> tuple[ParamStore, ModelConfig]:
    """Plain supervised training of the compact classifier (no policy).

    Used by the time-only early-exit baseline and the truncation
    viability sweep.  Selects the epoch with the best validation accuracy.
    """
    cfg = ModelConfig(
        n_channels=train_ds.n_channels, n_timesteps=train_ds.n_timesteps,
        n_classes=train_ds.n_classes, n_checkpoints=1, n_groups=1)
    assignment = GroupAssignment(1, np.zeros(train_ds.n_channels, dtype=np.int64),
                                 np.array([train_ds.n_channels]))
    params = init_params(cfg, assignment, seed)
    adam = AdamState(params, learning_rate=learning_rate)
    best_acc, best_state = -1.0, params.state_dict()
    for epoch in range(epochs):
        order = RngStream(seed, "shuffle", epoch).permutation(train_ds.n_samples)
        for start in range(0, len(order), minibatch):
            idx = order[start:start + minibatch]
            loss = tmean(softmax_cross_entropy(
                classifier_forward(params, train_ds.values[idx]), train_ds.labels[idx]))
            if not np.isfinite(loss.values):
                raise NumericFailure(f"non-finite classifier loss at epoch {epoch}")
            loss.backward()
            adam_step(params, adam)
        frozen = FrozenParams(params)
        preds = classifier_forward(frozen, val_ds.values).values.argmax(axis=1)
        acc = float((preds == val_ds.labels).mean()) if val_ds.n_samples else 0.0
        if acc > best_acc:
            best_acc = acc
            best_state = params.state_dict()
    params.load_state_dict(best_state)
    return params, cfg
