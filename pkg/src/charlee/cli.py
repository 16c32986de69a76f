"""Command-line operator surface.

Subcommands cover each pipeline stage::

    charlee synth  --config cfg.json [--out DIR]
    charlee rank   --config cfg.json [--out DIR]
    charlee train  --config cfg.json [--delta D] [--seed S] [--out DIR] [--resume]
    charlee eval   --config cfg.json --run-dir DIR [--out DIR]
    charlee toee   --config cfg.json (--target-savings S | --from-eval report.json)
    charlee report --runs DIR [DIR ...] [--out DIR]

Configuration is a JSON file (see README for the schema); command-line
flags override file values.  The environment variable CHARLEE_OUT_ROOT
sets the default output root.  Outputs are byte-deterministic for a
fixed config and seed; wall-clock metadata goes to run_meta.json only.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    ideal_table,
    load_csv,
    load_ts,
    slice_boundaries,
    split_train_val,
    write_csv,
    write_ts,
    znormalize,
)
from .errors import CharleeError, ConfigurationError, InputError, NumericFailure
from .evaluation import evaluate, stop_threshold, synthetic_alignment, toee_baseline, viability_curve
from .models import ModelConfig, init_params
from .numerics.checkpoint import load_tensors, save_tensors
from .numerics.optim import AdamState, ParamStore
from .ranking import ChannelRanking, GroupAssignment, group_channels, weighted_rank
from .training import RunContext, TrainConfig, train

DEFAULT_SEEDS = [0, 1, 2, 3, 4]


@dataclass
class RunConfig:
    """Everything a pipeline run needs; round-trips losslessly through JSON."""

    dataset: dict = field(default_factory=lambda: {"kind": "synthetic", "n_per_class": 60,
                                                   "noise_std": 0.1, "seed": 0})
    name: str = "synthetic"
    delta: float = 0.2
    n_checkpoints: int = 3
    n_groups: int | None = None  # default min(C, 10)
    w_last: float = 0.1
    gamma: float = 0.99
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    epochs: int = 100
    minibatch: int = 32
    learning_rate: float = 1e-3
    val_fraction: float = 0.2
    mask_value: float = 0.0
    actor_lr_scale: float = 0.05
    out_dir: str | None = None

    _FIELDS = ("dataset", "name", "delta", "n_checkpoints", "n_groups", "w_last", "gamma",
               "seeds", "epochs", "minibatch", "learning_rate", "val_fraction",
               "mask_value", "actor_lr_scale", "out_dir")

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
        unknown = set(raw) - set(cls._FIELDS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        for key, value in (overrides or {}).items():
            if value is not None:
                setattr(cfg, key, value)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError(f"delta must be in [0, 1], got {self.delta}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.n_checkpoints < 1:
            raise ConfigurationError("n_checkpoints must be >= 1")
        if not self.seeds:
            raise ConfigurationError("seeds list must not be empty")
        kind = self.dataset.get("kind")
        if kind not in ("synthetic", "ts", "csv"):
            raise ConfigurationError(f"dataset.kind must be synthetic, ts, or csv, got {kind!r}")

    def to_json(self) -> str:
        payload = {k: getattr(self, k) for k in self._FIELDS}
        return json.dumps(payload, indent=2, sort_keys=True)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            delta=self.delta, n_checkpoints=self.n_checkpoints, n_groups=self.n_groups,
            w_last=self.w_last, gamma=self.gamma, epochs=self.epochs,
            minibatch=self.minibatch, learning_rate=self.learning_rate, seed=seed,
            val_fraction=self.val_fraction, mask_value=self.mask_value,
            noise_std=float(self.dataset.get("noise_std", 0.0)),
            actor_lr_scale=self.actor_lr_scale,
        )


def out_root(config: RunConfig, flag_value: str | None) -> Path:
    root = flag_value or config.out_dir or os.environ.get("CHARLEE_OUT_ROOT", "runs")
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_datasets(config: RunConfig) -> tuple[Dataset, Dataset, dict | None]:
    """Returns (train, test, ideal table or None)."""
    spec = config.dataset
    kind = spec["kind"]
    if kind == "synthetic":
        synth = SyntheticSpec(n_per_class=int(spec.get("n_per_class", 60)),
                              noise_std=float(spec.get("noise_std", 0.1)),
                              seed=int(spec.get("seed", 0)))
        train_ds, test_ds, table = generate_synthetic(synth)
        return train_ds, test_ds, table
    loader = load_ts if kind == "ts" else load_csv
    try:
        train_ds = loader(spec["train_path"])
        test_ds = loader(spec["test_path"])
    except KeyError as exc:
        raise ConfigurationError(f"dataset config missing {exc}") from None
    return train_ds, test_ds, None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_meta(directory: Path, command: str) -> None:
    _write_json(directory / "run_meta.json", {"command": command, "finished_at": time.time()})


# ------------------------------------------------------------------ synth


def cmd_synth(config: RunConfig, out: Path) -> int:
    if config.dataset.get("kind") != "synthetic":
        raise ConfigurationError("synth requires a synthetic dataset config")
    train_ds, test_ds, table = load_datasets(config)
    write_ts(out / "train.ts", train_ds, problem_name=config.name)
    write_ts(out / "test.ts", test_ds, problem_name=config.name)
    write_csv(out / "train.csv", train_ds)
    write_csv(out / "test.csv", test_ds)
    _write_json(out / "ideal_utilization.json", table)
    _write_meta(out, "synth")
    print(f"synth: wrote {train_ds.n_samples}+{test_ds.n_samples} samples to {out}")
    return 0


# ------------------------------------------------------------------ rank


def cmd_rank(config: RunConfig, out: Path) -> int:
    train_ds, _, _ = load_datasets(config)
    normalized = znormalize(train_ds)
    spec = slice_boundaries(normalized.n_timesteps, config.n_checkpoints)
    ranking = weighted_rank(normalized, spec, config.w_last)
    n_groups = config.n_groups or min(normalized.n_channels, 10)
    assignment = group_channels(ranking, n_groups)
    payload = json.loads(ranking.to_json())
    payload["groups"] = assignment.to_json_obj()
    _write_json(out / "ranking.json", payload)
    _write_meta(out, "rank")
    print(f"rank: keep priority {ranking.keep_priority.tolist()} -> {out / 'ranking.json'}")
    return 0


# ------------------------------------------------------------------ train


def seed_dir(root: Path, config: RunConfig, seed: int) -> Path:
    d = root / config.name / f"delta_{config.delta:g}" / f"seed_{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _save_sidecar(directory: Path, result, config: RunConfig, seed: int,
                  table: dict | None) -> None:
    ctx = result.ctx
    _write_json(directory / "sidecar.json", {
        "model": ctx.model.to_json_obj(),
        "groups": ctx.assignment.to_json_obj(),
        "ranking": json.loads(ctx.ranking_json),
        "qset": ctx.qset.tolist(),
        "best_epoch": result.best_epoch,
        "best_val_reward": result.best_val_reward,
        "seed": seed,
        "delta": config.delta,
        "dataset": config.dataset,
        "name": config.name,
        "ideal_utilization": table,
        "config": json.loads(config.to_json()),
    })


def _history_csv(directory: Path, history: list[dict]) -> None:
    fields = ["epoch", "loss_acc", "loss_full", "loss_filter", "loss_baseline",
              "loss_stop", "val_reward", "val_f1", "val_savings"]
    with open(directory / "history.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(float(v)) if k != "epoch" else v for k, v in row.items()})


def _save_resume_state(directory: Path, result) -> None:
    tensors = {}
    for name, values in result.last_params.items():
        tensors[f"param/{name}"] = values
    for name, values in result.best_params.items():
        tensors[f"best/{name}"] = values
    for name, values in result.adam.m.items():
        tensors[f"adam.m/{name}"] = values
    for name, values in result.adam.v.items():
        tensors[f"adam.v/{name}"] = values
    tensors["meta/step"] = np.float64(result.adam.step_count)
    tensors["meta/epoch_next"] = np.float64(len(result.history))
    tensors["meta/best_val"] = np.float64(result.best_val_reward)
    tensors["meta/best_epoch"] = np.float64(result.best_epoch)
    save_tensors(directory / "state.bin", tensors)


def _load_resume_state(directory: Path, ctx, config: TrainConfig):
    tensors = load_tensors(directory / "state.bin")
    params = init_params(ctx.model, ctx.assignment, config.seed)
    params.load_state_dict({n[len("param/"):]: v for n, v in tensors.items()
                            if n.startswith("param/")})
    adam = AdamState(params, learning_rate=config.learning_rate,
                     lr_multipliers={"filter.": config.actor_lr_scale,
                                     "encoder.": config.actor_lr_scale})
    for name in adam.m:
        adam.m[name] = tensors[f"adam.m/{name}"].copy()
        adam.v[name] = tensors[f"adam.v/{name}"].copy()
    adam.step_count = int(tensors["meta/step"])
    best_params = {n[len("best/"):]: v for n, v in tensors.items() if n.startswith("best/")}
    best_state = (float(tensors["meta/best_val"]), int(tensors["meta/best_epoch"]), best_params)
    epoch_next = int(tensors["meta/epoch_next"])
    history = []
    with open(directory / "history.csv") as fh:
        for row in csv.DictReader(fh):
            history.append({k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()})
    return params, adam, best_state, epoch_next, history


def cmd_train(config: RunConfig, out: Path, resume: bool = False) -> int:
    train_raw, _, table = load_datasets(config)
    for seed in config.seeds:
        directory = seed_dir(out, config, seed)
        tc = config.train_config(seed)
        if resume and (directory / "state.bin").exists():
            normalized = znormalize(train_raw)
            train_split, _ = split_train_val(normalized, tc.val_fraction, tc.seed)
            ctx = RunContext.build(train_split, tc)
            params, adam, best_state, epoch_next, history = _load_resume_state(directory, ctx, tc)
            if epoch_next >= tc.epochs:
                print(f"train: seed {seed} already complete")
                continue
            result = train(train_raw, tc, ctx=ctx, start_epoch=epoch_next, params=params,
                           adam=adam, best_state=best_state, history=history)
        else:
            result = train(train_raw, tc)
        save_tensors(directory / "checkpoint.bin", result.best_params)
        _save_sidecar(directory, result, config, seed, table)
        _history_csv(directory, result.history)
        _save_resume_state(directory, result)
        _write_meta(directory, "train")
        print(f"train: seed {seed} best epoch {result.best_epoch} "
              f"val reward {result.best_val_reward:.4f} -> {directory}")
    return 0


# ------------------------------------------------------------------ eval


def _rebuild_ctx(sidecar: dict) -> RunContext:
    model = ModelConfig.from_json_obj(sidecar["model"])
    groups = sidecar["groups"]
    assignment = GroupAssignment(groups["n_groups"],
                                 np.asarray(groups["group_of_channel"], dtype=np.int64),
                                 np.asarray(groups["group_sizes"], dtype=np.int64))
    spec = slice_boundaries(model.n_timesteps, model.n_checkpoints)
    from .episode import quantized_set

    qset = quantized_set(assignment.group_sizes, model.n_channels)
    return RunContext(model, assignment, spec, qset,
                      json.dumps(sidecar.get("ranking", {})))


def load_run(run_dir: Path) -> tuple[ParamStore, RunContext, dict]:
    run_dir = Path(run_dir)
    try:
        sidecar = json.loads((run_dir / "sidecar.json").read_text())
    except FileNotFoundError:
        raise InputError(f"{run_dir}: no sidecar.json (not a training run directory?)") from None
    ctx = _rebuild_ctx(sidecar)
    params = init_params(ctx.model, ctx.assignment, int(sidecar.get("seed", 0)))
    params.load_state_dict(load_tensors(run_dir / "checkpoint.bin"))
    return params, ctx, sidecar


def _append_summary(path: Path, rows: list[dict]) -> None:
    fields = ["dataset", "delta", "seed", "f1", "savings", "method"]
    exists = path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        if not exists:
            writer.writeheader()
        writer.writerows(rows)


def cmd_eval(config: RunConfig, run_dir: Path, out: Path) -> int:
    params, ctx, sidecar = load_run(run_dir)
    _, test_raw, table = load_datasets(config)
    test_ds = znormalize(test_raw)
    delta = float(sidecar.get("delta", config.delta))
    seed = int(sidecar.get("seed", 0))
    report = evaluate(test_ds, params, ctx, delta, seed=seed,
                      config_echo=sidecar.get("config", {}))
    _write_json(out / "report.json", report.to_json_obj())
    with open(out / "traces.jsonl", "w") as fh:
        for trace in report.traces:
            fh.write(json.dumps(trace, sort_keys=True) + "\n")
    if table is not None:
        _write_json(out / "alignment.json", synthetic_alignment(report, table))
    _append_summary(out / "summary.csv", [{
        "dataset": sidecar.get("name", config.name), "delta": repr(delta), "seed": seed,
        "f1": repr(report.macro_f1), "savings": repr(report.mean_savings), "method": "charlee",
    }])
    _write_meta(out, "eval")
    print(f"eval: f1 {report.macro_f1:.4f} savings {report.mean_savings:.4f} -> {out}")
    return 0


# ------------------------------------------------------------------ toee


def cmd_toee(config: RunConfig, out: Path, target_savings: float | None,
             from_eval: Path | None) -> int:
    if target_savings is None:
        if from_eval is None:
            raise ConfigurationError("toee needs --target-savings or --from-eval")
        report = json.loads(Path(from_eval).read_text())
        target_savings = float(report["mean_savings"])
    train_raw, test_raw, _ = load_datasets(config)
    mean_f1, per_seed = toee_baseline(train_raw, test_raw, target_savings,
                                      seeds=config.seeds, epochs=config.epochs)
    rows = [{"dataset": config.name, "delta": repr(config.delta), "seed": seed,
             "f1": repr(f1), "savings": repr(target_savings), "method": "toee"}
            for seed, f1 in zip(config.seeds, per_seed)]
    _append_summary(out / "summary.csv", rows)
    _write_json(out / "toee.json", {"target_savings": target_savings,
                                    "mean_f1": mean_f1, "per_seed": per_seed,
                                    "seeds": list(config.seeds)})
    _write_meta(out, "toee")
    print(f"toee: savings {target_savings:.4f} mean f1 {mean_f1:.4f} -> {out}")
    return 0


def cmd_viability(config: RunConfig, out: Path) -> int:
    train_raw, test_raw, _ = load_datasets(config)
    rows = viability_curve(train_raw, test_raw, seed=config.seeds[0], epochs=config.epochs)
    with open(out / "viability.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["fraction", "accuracy", "macro_f1"])
        writer.writeheader()
        for row in rows:
            writer.writerow({"fraction": row["fraction"], "accuracy": repr(row["accuracy"]),
                             "macro_f1": repr(row["macro_f1"])})
    _write_meta(out, "viability")
    print(f"viability: {len(rows)} fractions -> {out / 'viability.csv'}")
    return 0


# ------------------------------------------------------------------ report


def cmd_report(run_dirs: list[Path], out: Path, margin: float = 0.01) -> int:
    rows = []
    for directory in run_dirs:
        path = Path(directory) / "summary.csv"
        if not path.exists():
            raise InputError(f"{directory}: no summary.csv")
        with open(path) as fh:
            for row in csv.DictReader(fh):
                rows.append(row)
    groups: dict[tuple, dict[str, list[float]]] = {}
    for row in rows:
        key = (row["dataset"], float(row["delta"]))
        groups.setdefault(key, {}).setdefault(row["method"], []).append(float(row["f1"]))
    out_rows = []
    for (dataset, delta), methods in sorted(groups.items()):
        charlee = methods.get("charlee", [])
        toee = methods.get("toee", [])
        entry = {
            "dataset": dataset, "delta": delta,
            "charlee_f1_mean": repr(float(np.mean(charlee))) if charlee else "",
            "charlee_f1_std": repr(float(np.std(charlee))) if charlee else "",
            "toee_f1_mean": repr(float(np.mean(toee))) if toee else "",
            "toee_f1_std": repr(float(np.std(toee))) if toee else "",
            "outcome": "",
        }
        if charlee and toee:
            gap = float(np.mean(charlee)) - float(np.mean(toee))
            eps = 1e-9  # exact-boundary gaps count as ties
            entry["outcome"] = "win" if gap > margin + eps else ("loss" if gap < -margin - eps else "tie")
        out_rows.append(entry)
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["dataset", "delta", "charlee_f1_mean",
                                                "charlee_f1_std", "toee_f1_mean",
                                                "toee_f1_std", "outcome"])
        writer.writeheader()
        writer.writerows(out_rows)
    _write_meta(out, "report")
    print(f"report: {len(out_rows)} comparison rows -> {out / 'comparison.csv'}")
    return 0


# ------------------------------------------------------------------ entry


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="charlee",
                                     description="Channel-adaptive RL early exiting.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory root")
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--seed", type=int, default=None, help="replace the seeds list")
        p.add_argument("--epochs", type=int, default=None)

    for name in ("synth", "rank", "train", "eval", "toee", "viability"):
        p = sub.add_parser(name)
        common(p)
        if name == "train":
            p.add_argument("--resume", action="store_true")
        if name == "eval":
            p.add_argument("--run-dir", required=True)
        if name == "toee":
            p.add_argument("--target-savings", type=float, default=None)
            p.add_argument("--from-eval", default=None)

    p = sub.add_parser("report")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            out = Path(args.out or os.environ.get("CHARLEE_OUT_ROOT", "runs"))
            out.mkdir(parents=True, exist_ok=True)
            return cmd_report([Path(d) for d in args.runs], out)
        overrides = {"delta": args.delta, "epochs": args.epochs}
        if args.seed is not None:
            overrides["seeds"] = [args.seed]
        config = RunConfig.load(args.config, overrides)
        out = out_root(config, args.out)
        if args.command == "synth":
            return cmd_synth(config, out)
        if args.command == "rank":
            return cmd_rank(config, out)
        if args.command == "train":
            return cmd_train(config, out, resume=args.resume)
        if args.command == "eval":
            return cmd_eval(config, Path(args.run_dir), out)
        if args.command == "toee":
            return cmd_toee(config, out, args.target_savings,
                            Path(args.from_eval) if args.from_eval else None)
        if args.command == "viability":
            return cmd_viability(config, out)
        raise ConfigurationError(f"unknown command {args.command}")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except CharleeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
