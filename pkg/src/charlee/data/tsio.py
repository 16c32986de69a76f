"""Readers and writers for the UEA ``.ts`` text format and a long-format CSV.

Only equal-length, fully observed series are supported; variable-length
or missing-value files are rejected as unsupported rather than imputed.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import InputError
from .core import Dataset

_TRUE = {"true", "1", "yes"}


def load_ts(path) -> Dataset:
    """Parse a ``.ts`` file: @header lines, then ``:``-separated dimensions."""
    path = Path(path)
    headers: dict[str, str] = {}
    rows: list[list[list[float]]] = []
    labels: list[str] = []
    in_data = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not in_data and line.startswith("@"):
                key, _, value = line.partition(" ")
                key = key[1:].lower()
                if key == "data":
                    in_data = True
                else:
                    headers[key] = value.strip()
                continue
            if not in_data:
                raise InputError(f"{path}:{lineno}: data before @data marker")
            parts = line.split(":")
            if len(parts) < 2:
                raise InputError(f"{path}:{lineno}: expected ':'-separated dimensions and label")
            *dims, label = parts
            try:
                series = [[float(v) for v in dim.split(",")] for dim in dims]
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric value "
                                 "(missing values are unsupported)") from None
            rows.append(series)
            labels.append(label.strip())

    if not rows:
        raise InputError(f"{path}: no data rows")
    n_dims = len(rows[0])
    if "dimensions" in headers and int(headers["dimensions"]) != n_dims:
        raise InputError(f"{path}: @dimensions={headers['dimensions']} but rows have {n_dims}")
    lengths = {len(dim) for series in rows for dim in series}
    if len(lengths) != 1:
        raise InputError(f"{path}: ragged series lengths {sorted(lengths)} unsupported")
    t = lengths.pop()
    if "serieslength" in headers and int(headers["serieslength"]) != t:
        raise InputError(f"{path}: @seriesLength={headers['serieslength']} but data length is {t}")
    if any(len(series) != n_dims for series in rows):
        raise InputError(f"{path}: inconsistent dimension counts across samples")

    label_names: list[str] = []
    label_idx = []
    for lab in labels:
        if lab not in label_names:
            label_names.append(lab)
        label_idx.append(label_names.index(lab))
    values = np.asarray(rows, dtype=np.float64)
    name = headers.get("problemname", path.stem)
    return Dataset(values, np.asarray(label_idx), len(label_names),
                   label_names=label_names,
                   metadata={"source": str(path), "problem_name": name, "format": "ts"})


def write_ts(path, dataset: Dataset, problem_name: str | None = None) -> None:
    path = Path(path)
    name = problem_name or dataset.metadata.get("problem_name", path.stem)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"@problemName {name}\n")
        fh.write("@timeStamps false\n")
        fh.write("@missing false\n")
        fh.write(f"@univariate {'true' if dataset.n_channels == 1 else 'false'}\n")
        fh.write(f"@dimensions {dataset.n_channels}\n")
        fh.write("@equalLength true\n")
        fh.write(f"@seriesLength {dataset.n_timesteps}\n")
        fh.write(f"@classLabel true {' '.join(dataset.label_names)}\n")
        fh.write("@data\n")
        for i in range(dataset.n_samples):
            dims = ":".join(",".join(repr(float(v)) for v in channel) for channel in dataset.values[i])
            fh.write(f"{dims}:{dataset.label_names[dataset.labels[i]]}\n")


def load_csv(path) -> Dataset:
    """Long-format CSV: sample_id, channel_id, label, t0..t{T-1}."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["sample_id", "channel_id", "label"]:
            raise InputError(f"{path}: expected header sample_id,channel_id,label,t0,...")
        t = len(header) - 3
        samples: dict[str, dict[str, list[float]]] = {}
        sample_labels: dict[str, str] = {}
        channel_order: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != t + 3:
                raise InputError(f"{path}:{lineno}: expected {t + 3} columns, got {len(row)}")
            sid, cid, label = row[0], row[1], row[2]
            if sid in sample_labels and sample_labels[sid] != label:
                raise InputError(f"{path}:{lineno}: sample {sid} has inconsistent labels")
            sample_labels[sid] = label
            if cid not in channel_order:
                channel_order.append(cid)
            per_sample = samples.setdefault(sid, {})
            if cid in per_sample:
                raise InputError(f"{path}:{lineno}: duplicate channel {cid} for sample {sid}")
            try:
                per_sample[cid] = [float(v) for v in row[3:]]
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric value") from None

    if not samples:
        raise InputError(f"{path}: no data rows")
    for sid, chans in samples.items():
        missing = set(channel_order) - set(chans)
        if missing:
            raise InputError(f"{path}: sample {sid} is missing channel rows {sorted(missing)}")
    label_names: list[str] = []
    values = []
    labels = []
    for sid in samples:  # dict preserves first-appearance order
        lab = sample_labels[sid]
        if lab not in label_names:
            label_names.append(lab)
        labels.append(label_names.index(lab))
        values.append([samples[sid][cid] for cid in channel_order])
    return Dataset(np.asarray(values, dtype=np.float64), np.asarray(labels), len(label_names),
                   channel_names=list(channel_order), label_names=label_names,
                   metadata={"source": str(path), "format": "csv"})


def write_csv(path, dataset: Dataset) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "channel_id", "label"] + [f"t{i}" for i in range(dataset.n_timesteps)])
        for i in range(dataset.n_samples):
            for c, cname in enumerate(dataset.channel_names):
                writer.writerow([f"s{i}", cname, dataset.label_names[dataset.labels[i]]]
                                + [repr(float(v)) for v in dataset.values[i, c]])
