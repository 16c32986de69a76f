"""Inference-mode episodes, metrics, the time-only early-exit baseline,
and the truncation viability sweep.

At inference the Beta action is taken at its mean (deterministic traces)
and the stop head is live: processing ends at checkpoint n when its
output exceeds tau(delta) = 1 - delta, clamped to [0.05, 0.999], which
realizes both extremes: delta=0 almost never stops early, delta=1 stops
at the first checkpoint for any non-degenerate head output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data.core import Dataset, group_activity, mask_apply_batch, truncate, znormalize, split_train_val
from .episode import savings_fraction, total_reward
from .errors import InputError
from .models import EncoderState, classifier_forward, filter_policy_forward, stop_policy_forward
from .numerics.optim import FrozenParams, ParamStore
from .numerics.special import beta_mean

TAU_MIN, TAU_MAX = 0.05, 0.999


def stop_threshold(delta: float) -> float:
    return float(np.clip(1.0 - delta, TAU_MIN, TAU_MAX))


def f1_macro(predictions, labels, n_classes: int) -> float:
    """Unweighted mean of per-class F1; absent classes contribute 0."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    scores = []
    for cls in range(n_classes):
        tp = np.sum((predictions == cls) & (labels == cls))
        fp = np.sum((predictions == cls) & (labels != cls))
        fn = np.sum((predictions != cls) & (labels == cls))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))


@dataclass
class EvalReport:
    macro_f1: float
    mean_savings: float
    mean_reward: float
    delta: float
    per_class_utilization: dict
    traces: list = field(repr=False)
    seed: int | None = None
    config_echo: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "mean_savings": self.mean_savings,
            "mean_reward": self.mean_reward,
            "delta": self.delta,
            "per_class_utilization": self.per_class_utilization,
            "seed": self.seed,
            "config": self.config_echo,
        }


def _eval_rollout(frozen, ctx, values: np.ndarray, labels: np.ndarray, delta: float,
                  mask_value: float = 0.0):
    """Deterministic batched rollout with the stop head active."""
    batch = values.shape[0]
    n = ctx.model.n_checkpoints
    tau = stop_threshold(delta)
    encoder = EncoderState(ctx.model, ctx.assignment, batch)
    schedules = np.zeros((batch, ctx.slice_spec.n_slices))
    schedules[:, 0] = 1.0
    history = np.zeros((batch, n))
    kept = np.ones(batch)
    running = np.ones(batch, dtype=bool)
    stop_checkpoint = np.zeros(batch, dtype=np.int64)  # 0 = ran to exhaustion
    from .training import _snap_batch  # shared snapping rule

    for ckpt in range(1, n + 1):
        a, b = ctx.slice_spec.boundaries[ckpt - 1]
        active = group_activity(kept, ctx.assignment.group_sizes) & running[:, None]
        encoder.encode_slice(frozen, values[:, :, a:b], a, active)
        state = encoder.state_vector(history, ckpt)
        alpha, beta = filter_policy_forward(frozen, state)
        action = beta_mean(alpha.values, beta.values)
        snapped = _snap_batch(action * kept, ctx.qset)
        a_s = stop_policy_forward(frozen, state.values, snapped).values
        fired = running & (a_s > tau)
        zeroed = running & ~fired & (snapped <= 0.0)
        ending = fired | zeroed
        stop_checkpoint[ending] = ckpt
        cont = running & ~ending
        schedules[cont, ckpt] = snapped[cont]
        history[cont, ckpt - 1] = snapped[cont]
        running = cont
        kept = np.where(running, snapped, 0.0)

    masked = mask_apply_batch(values, schedules, ctx.slice_spec,
                              ctx.assignment.group_of_channel, mask_value)
    predictions = classifier_forward(frozen, masked).values.argmax(axis=1)
    return schedules, predictions, stop_checkpoint


def evaluate_arrays(frozen, ctx, values: np.ndarray, labels: np.ndarray, delta: float,
                    batch_size: int = 512) -> dict:
    """Lightweight metric pass used inside the training loop."""
    if values.shape[0] == 0:
        raise InputError("evaluate on an empty dataset")
    s = ctx.slice_spec.n_slices
    all_sched, all_pred = [], []
    for start in range(0, values.shape[0], batch_size):
        sched, pred, _ = _eval_rollout(frozen, ctx, values[start:start + batch_size],
                                       labels[start:start + batch_size], delta)
        all_sched.append(sched)
        all_pred.append(pred)
    schedules = np.concatenate(all_sched)
    predictions = np.concatenate(all_pred)
    costs = schedules.sum(axis=1)
    rewards = [total_reward(bool(p == y), c, s, delta).total
               for p, y, c in zip(predictions, labels, costs)]
    return {
        "macro_f1": f1_macro(predictions, labels, ctx.model.n_classes),
        "mean_savings": float(np.mean((s - costs) / s)),
        "mean_reward": float(np.mean(rewards)),
    }


def run_episode_eval(sample: np.ndarray, label: int, params, ctx, delta: float) -> dict:
    """Single-sample deterministic inference trace."""
    frozen = FrozenParams(params) if isinstance(params, ParamStore) else params
    sched, pred, stop_ckpt = _eval_rollout(frozen, ctx, np.asarray(sample)[None],
                                           np.asarray([label]), delta)
    s = ctx.slice_spec.n_slices
    cost = float(sched[0].sum())
    breakdown = total_reward(bool(pred[0] == label), cost, s, delta)
    return {
        "utilization": sched[0].tolist(),
        "cost": cost,
        "savings": savings_fraction(sched[0]),
        "stop_checkpoint": int(stop_ckpt[0]) if stop_ckpt[0] > 0 else None,
        "prediction": int(pred[0]),
        "label": int(label),
        "reward": breakdown.as_dict(),
    }


def evaluate(dataset: Dataset, params, ctx, delta: float, seed: int | None = None,
             config_echo: dict | None = None, batch_size: int = 512) -> EvalReport:
    """Aggregate inference-mode traces over a dataset into a report."""
    if dataset.n_samples == 0:
        raise InputError("evaluate on an empty dataset")
    frozen = FrozenParams(params) if isinstance(params, ParamStore) else params
    values, labels = dataset.values, dataset.labels
    s = ctx.slice_spec.n_slices
    scheds, preds, stops = [], [], []
    for start in range(0, dataset.n_samples, batch_size):
        sched, pred, stop_ckpt = _eval_rollout(frozen, ctx, values[start:start + batch_size],
                                               labels[start:start + batch_size], delta)
        scheds.append(sched)
        preds.append(pred)
        stops.append(stop_ckpt)
    schedules = np.concatenate(scheds)
    predictions = np.concatenate(preds)
    stop_ckpts = np.concatenate(stops)
    costs = schedules.sum(axis=1)
    savings = (s - costs) / s
    traces = []
    rewards = []
    for i in range(dataset.n_samples):
        breakdown = total_reward(bool(predictions[i] == labels[i]), float(costs[i]), s, delta)
        rewards.append(breakdown.total)
        traces.append({
            "sample_id": i,
            "utilization": schedules[i].tolist(),
            "cost": float(costs[i]),
            "savings": float(savings[i]),
            "stop_checkpoint": int(stop_ckpts[i]) if stop_ckpts[i] > 0 else None,
            "prediction": int(predictions[i]),
            "label": int(labels[i]),
            "reward": breakdown.as_dict(),
        })
    per_class = {}
    for cls in range(dataset.n_classes):
        members = labels == cls
        if members.any():
            per_class[str(cls)] = schedules[members].mean(axis=0).tolist()
    return EvalReport(
        macro_f1=f1_macro(predictions, labels, dataset.n_classes),
        mean_savings=float(savings.mean()),
        mean_reward=float(np.mean(rewards)),
        delta=delta,
        per_class_utilization=per_class,
        traces=traces,
        seed=seed,
        config_echo=config_echo or {},
    )


def toee_baseline(train_ds: Dataset, test_ds: Dataset, target_savings: float,
                  seeds, epochs: int = 30, val_fraction: float = 0.2) -> tuple[float, list[float]]:
    """Time-only early exiting: truncate every channel at one static point
    matching the target savings, train the plain classifier per seed, and
    report the mean test macro F1."""
    from .training import train_classifier_supervised

    if not 0.0 <= target_savings < 1.0:
        raise InputError("target savings must be in [0, 1)")
    t = train_ds.n_timesteps
    keep_fraction = 1.0 - target_savings
    if int(np.ceil(keep_fraction * t)) < 1:
        raise InputError("truncation would leave no timesteps")
    f1s = []
    for seed in seeds:
        tr = znormalize(truncate(train_ds, keep_fraction))
        te = znormalize(truncate(test_ds, keep_fraction))
        tr_split, val_split = split_train_val(tr, val_fraction, seed)
        params, _ = train_classifier_supervised(tr_split, val_split, seed, epochs=epochs)
        preds = classifier_forward(FrozenParams(params), te.values).values.argmax(axis=1)
        f1s.append(f1_macro(preds, te.labels, te.n_classes))
    return float(np.mean(f1s)), f1s


def viability_curve(train_ds: Dataset, test_ds: Dataset, seed: int = 0,
                    epochs: int = 30, fractions=None) -> list[dict]:
    """Accuracy of the plain classifier at each truncation fraction.

    Defaults to 5%..95% in 5% steps plus the full length (20 rows).
    """
    if fractions is None:
        fractions = [round(0.05 * i, 2) for i in range(1, 20)] + [1.0]
    from .training import train_classifier_supervised

    rows = []
    for fraction in fractions:
        tr = znormalize(truncate(train_ds, fraction))
        te = znormalize(truncate(test_ds, fraction))
        tr_split, val_split = split_train_val(tr, 0.2, seed)
        params, _ = train_classifier_supervised(tr_split, val_split, seed, epochs=epochs)
        preds = classifier_forward(FrozenParams(params), te.values).values.argmax(axis=1)
        rows.append({
            "fraction": fraction,
            "accuracy": float((preds == te.labels).mean()),
            "macro_f1": f1_macro(preds, te.labels, te.n_classes),
        })
    return rows


def synthetic_alignment(report: EvalReport, ideal_table: dict) -> dict:
    """Per-class L1 gap between achieved mean utilization and the ideal,
    plus the savings gap."""
    out = {}
    for cls, entry in ideal_table.items():
        achieved = report.per_class_utilization.get(str(cls))
        if achieved is None:
            continue
        ideal = np.asarray(entry["utilization"], dtype=np.float64)
        achieved = np.asarray(achieved)
        out[str(cls)] = {
            "l1_utilization": float(np.abs(achieved - ideal).sum()),
            "achieved_savings": savings_fraction(achieved),
            "ideal_savings": entry["savings"],
            "savings_gap": float(entry["savings"] - savings_fraction(achieved)),
        }
    return out
