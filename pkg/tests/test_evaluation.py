import numpy as np
import pytest
from sklearn.metrics import f1_score

from charlee.data import Dataset, SyntheticSpec, class_prototypes, generate_synthetic, znormalize
from charlee.errors import InputError
from charlee.evaluation import (
    EvalReport,
    evaluate,
    f1_macro,
    run_episode_eval,
    stop_threshold,
    synthetic_alignment,
    toee_baseline,
    viability_curve,
)
from charlee.models import init_params
from charlee.training import RunContext, TrainConfig


@pytest.fixture(scope="module")
def setup():
    train_ds, test_ds, table = generate_synthetic(SyntheticSpec(n_per_class=6, noise_std=0.1, seed=5))
    config = TrainConfig(delta=0.2, epochs=1, seed=0, n_groups=4)
    normalized = znormalize(train_ds)
    ctx = RunContext.build(normalized, config)
    params = init_params(ctx.model, ctx.assignment, seed=0)
    return normalized, znormalize(test_ds), table, ctx, params


# ---------------------------------------------------------------- threshold


def test_stop_threshold_extremes():
    assert stop_threshold(0.0) == 0.999
    assert stop_threshold(1.0) == 0.05
    assert stop_threshold(0.2) == pytest.approx(0.8)


# ---------------------------------------------------------------- f1


def test_f1_perfect():
    assert f1_macro([0, 1, 2], [0, 1, 2], 3) == 1.0


def test_f1_confusion_arithmetic():
    assert f1_macro([0, 1, 0, 1], [0, 0, 1, 1], 2) == pytest.approx(0.5)


def test_f1_single_class_predictor():
    assert f1_macro([0, 0, 0, 0], [0, 0, 1, 1], 2) == pytest.approx(1.0 / 3.0)


def test_f1_absent_class_counts_zero():
    # class 2 absent from labels and predictions -> contributes 0
    assert f1_macro([0, 1], [0, 1], 3) == pytest.approx(2.0 / 3.0)


def test_f1_matches_sklearn():
    rng = np.random.default_rng(0)
    for _ in range(30):
        k = int(rng.integers(2, 6))
        y = rng.integers(0, k, size=40)
        p = rng.integers(0, k, size=40)
        ours = f1_macro(p, y, k)
        theirs = f1_score(y, p, labels=range(k), average="macro", zero_division=0)
        assert ours == pytest.approx(theirs, abs=1e-12)


# ---------------------------------------------------------------- eval episodes


def test_eval_trace_deterministic(setup):
    normalized, _, _, ctx, params = setup
    t1 = run_episode_eval(normalized.values[0], normalized.labels[0], params, ctx, 0.2)
    t2 = run_episode_eval(normalized.values[0], normalized.labels[0], params, ctx, 0.2)
    assert t1 == t2


def test_eval_delta_one_stops_immediately(setup):
    normalized, _, _, ctx, params = setup
    # tau = 0.05; an untrained sigmoid head outputs ~0.5 > 0.05
    trace = run_episode_eval(normalized.values[0], normalized.labels[0], params, ctx, 1.0)
    assert trace["stop_checkpoint"] == 1
    np.testing.assert_allclose(trace["utilization"], [1, 0, 0, 0])
    assert trace["cost"] == 1.0


def test_eval_delta_zero_never_stops_via_head(setup):
    normalized, _, _, ctx, params = setup
    trace = run_episode_eval(normalized.values[1], normalized.labels[1], params, ctx, 0.0)
    # with tau = 0.999 an untrained head cannot fire; exit only on
    # fraction zero or exhaustion, and the keep-biased init holds 0.75
    assert trace["utilization"][1] > 0


def test_evaluate_report_consistency(setup):
    normalized, _, _, ctx, params = setup
    report = evaluate(normalized, params, ctx, 0.3, seed=11)
    s = ctx.slice_spec.n_slices
    # mean savings equals mean over traces of (S - cost)/S exactly
    recomputed = np.mean([(s - t["cost"]) / s for t in report.traces])
    assert report.mean_savings == pytest.approx(recomputed, abs=1e-12)
    # per-class mean utilization matches hand aggregation
    for cls, mean_u in report.per_class_utilization.items():
        members = [t["utilization"] for t in report.traces if t["label"] == int(cls)]
        np.testing.assert_allclose(mean_u, np.mean(members, axis=0), atol=1e-12)
    preds = [t["prediction"] for t in report.traces]
    labels = [t["label"] for t in report.traces]
    assert report.macro_f1 == pytest.approx(f1_macro(preds, labels, ctx.model.n_classes))


def test_evaluate_empty_rejected(setup):
    normalized, _, _, ctx, params = setup
    empty = Dataset(np.zeros((0, 4, 96)), np.zeros(0, dtype=int), 8)
    with pytest.raises(InputError):
        evaluate(empty, params, ctx, 0.2)


def test_utilization_invariants_over_random_parameter_draws(setup):
    normalized, _, _, ctx, _ = setup
    for seed in range(3):
        params = init_params(ctx.model, ctx.assignment, seed=seed)
        report = evaluate(normalized.subset(np.arange(16)), params, ctx, 0.5)
        for t in report.traces:
            u = np.asarray(t["utilization"])
            assert u[0] == 1.0
            assert np.all(np.diff(u) <= 1e-12)
            assert all(any(np.isclose(v, ctx.qset)) for v in u)
            assert -1.0 <= t["reward"]["r_savings"] <= 1.0


# ---------------------------------------------------------------- toee + viability


def nearest_centroid_f1(train_vals, train_labels, test_vals, test_labels, k):
    """Tie-aware nearest centroid: near-equal distances take the lowest index."""
    cents = np.stack([train_vals[train_labels == c].mean(axis=0) for c in range(k)])
    d = ((test_vals[:, None] - cents[None]) ** 2).sum(axis=(2, 3))
    near = d <= d.min(axis=1, keepdims=True) + 1e-9
    preds = near.argmax(axis=1)
    return f1_macro(preds, test_labels, k)


def test_toee_oracle_bounds_on_noiseless_prototypes():
    """Nearest centroid on truncated noiseless prototypes: slices 1-2 leave
    three pairs degenerate (macro F1 <= 0.8); slice 1 only separates just
    the first pair."""
    protos = class_prototypes()
    ds = Dataset(np.repeat(protos, 2, axis=0), np.repeat(np.arange(8), 2), 8)
    z = znormalize(ds)

    half = Dataset(z.values[:, :, :48], z.labels, 8)
    zh = znormalize(half)
    f1_half = nearest_centroid_f1(zh.values, zh.labels, zh.values, zh.labels, 8)
    assert f1_half < 1.0 and f1_half <= 0.8

    quarter = Dataset(z.values[:, :, :24], z.labels, 8)
    zq = znormalize(quarter)
    f1_quarter = nearest_centroid_f1(zq.values, zq.labels, zq.values, zq.labels, 8)
    assert f1_quarter <= f1_half
    cents = np.stack([zq.values[zq.labels == c].mean(axis=0) for c in range(8)])
    for a, b in [(0, 1)]:
        assert not np.allclose(cents[a], cents[b])
    for a, b in [(2, 3), (4, 5), (6, 7), (4, 6)]:
        assert np.allclose(cents[a], cents[b], atol=1e-9)


def test_toee_baseline_runs_and_degrades():
    train_ds, test_ds, _ = generate_synthetic(SyntheticSpec(n_per_class=8, noise_std=0.05, seed=9))
    full_f1, _ = toee_baseline(train_ds, test_ds, 0.0, seeds=[0], epochs=12)
    trunc_f1, per_seed = toee_baseline(train_ds, test_ds, 0.5, seeds=[0], epochs=12)
    assert len(per_seed) == 1
    assert 0.0 <= trunc_f1 <= 1.0
    assert trunc_f1 <= 0.85  # three pairs are information-theoretically degenerate
    with pytest.raises(InputError):
        toee_baseline(train_ds, test_ds, 1.0, seeds=[0])


def test_viability_curve_row_count_and_default_fractions():
    train_ds, test_ds, _ = generate_synthetic(SyntheticSpec(n_per_class=4, noise_std=0.05, seed=4))
    rows = viability_curve(train_ds, test_ds, seed=0, epochs=2)
    assert len(rows) == 20
    assert rows[-1]["fraction"] == 1.0
    assert rows[0]["fraction"] == 0.05
    assert all(0.0 <= r["accuracy"] <= 1.0 for r in rows)


# ---------------------------------------------------------------- alignment


def test_synthetic_alignment_zero_when_equal():
    report = EvalReport(1.0, 0.75, 1.0, 0.2,
                        {"0": [1.0, 0.0, 0.0, 0.0]}, traces=[])
    table = {"0": {"utilization": [1.0, 0.0, 0.0, 0.0], "savings": 0.75}}
    out = synthetic_alignment(report, table)
    assert out["0"]["l1_utilization"] == 0.0
    assert out["0"]["savings_gap"] == 0.0


def test_synthetic_alignment_l1_arithmetic():
    report = EvalReport(1.0, 0.0, 1.0, 0.2,
                        {"0": [1.0, 1.0, 1.0, 1.0]}, traces=[])
    table = {"0": {"utilization": [1.0, 0.0, 0.0, 0.0], "savings": 0.75}}
    out = synthetic_alignment(report, table)
    assert out["0"]["l1_utilization"] == pytest.approx(3.0)
    assert out["0"]["savings_gap"] == pytest.approx(0.75)


def test_synthetic_alignment_matches_trace_recomputation(setup):
    normalized, _, table, ctx, params = setup
    report = evaluate(normalized, params, ctx, 0.2)
    out = synthetic_alignment(report, table)
    for cls, entry in out.items():
        traces = [t["utilization"] for t in report.traces if t["label"] == int(cls)]
        mean_u = np.mean(traces, axis=0)
        ideal = np.asarray(table[cls]["utilization"])
        assert entry["l1_utilization"] == pytest.approx(np.abs(mean_u - ideal).sum(), abs=1e-9)
