"""Synthetic 8-class benchmark with known per-class minimal observation schedules.

Four channels, 96 timesteps, four slices of 24.  Class identity is coded
by the polarity of biphasic (mean-zero) pulses placed in specific
(channel, slice) cells.  Because every pulse alternative has the same
energy and zero mean, classes that must be confusable on a partial
observation region have *exactly* equal per-channel statistics, so the
ambiguity structure survives per-channel z-normalization.

Structure (channels c0..c3, slices s0..s3):

* classes 0,1 differ inside s0 only            -> ideal schedule [1, 0, 0, 0]
* classes 2,3 differ only at (c3, s3)          -> ideal [1, .25, .25, .25]
* classes 4,5 differ only at (c2, s3); the pair
  is indistinguishable from classes 6,7 until
  slice s1 reveals it on channel c0            -> ideal [1, 1, .5, .5]
* classes 6,7 differ only at (c0, s3)          -> ideal [1, 1, 1, 1]

Channel c0 carries the earliest discriminative signal and c3 the latest,
so the prefix-based channel ranking drops c0 first and keeps c3 longest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..numerics.rng import RngStream
from .core import Dataset

N_CLASSES = 8
N_CHANNELS = 4
N_TIMESTEPS = 96
N_SLICES = 4
SLICE_LEN = N_TIMESTEPS // N_SLICES

IDEAL_UTILIZATION = {
    0: (1.0, 0.0, 0.0, 0.0),
    1: (1.0, 0.0, 0.0, 0.0),
    2: (1.0, 0.25, 0.25, 0.25),
    3: (1.0, 0.25, 0.25, 0.25),
    4: (1.0, 1.0, 0.5, 0.5),
    5: (1.0, 1.0, 0.5, 0.5),
    6: (1.0, 1.0, 1.0, 1.0),
    7: (1.0, 1.0, 1.0, 1.0),
}

# Pulse slot centers within a slice; the biphasic pulse spans center +- 6.
_SLOT_CENTER = {"E": 6, "L": 17}
_LOBE_HALF_WIDTH = 3

# (channel, slice, slot, amplitude) per class.  Amplitudes share magnitudes
# across coupled classes so channel standard deviations match exactly where
# ambiguity is required.  Polarity-coded cells occupy both slots of their
# slice (same sign), which doubles the pooled evidence a global-average
# classifier sees without touching the equality structure; channel c0's
# first slice instead uses the two slots as a 4-way group code.
_PULSES = {
    0: [(0, 0, "E", +1), (0, 0, "L", +2), (1, 0, "E", +1), (1, 0, "L", +1)],
    1: [(0, 0, "E", +1), (0, 0, "L", -2), (1, 0, "E", +1), (1, 0, "L", +1)],
    2: [(0, 0, "E", -1), (0, 0, "L", +2), (1, 0, "E", -1), (1, 0, "L", -1),
        (3, 3, "E", +1), (3, 3, "L", +1)],
    3: [(0, 0, "E", -1), (0, 0, "L", +2), (1, 0, "E", -1), (1, 0, "L", -1),
        (3, 3, "E", -1), (3, 3, "L", -1)],
    4: [(0, 0, "E", -1), (0, 0, "L", -2), (0, 1, "E", +1), (0, 1, "L", +1),
        (0, 3, "E", +1), (0, 3, "L", +1),
        (2, 1, "L", +1), (2, 2, "E", +1), (2, 3, "E", +1), (2, 3, "L", +1)],
    5: [(0, 0, "E", -1), (0, 0, "L", -2), (0, 1, "E", +1), (0, 1, "L", +1),
        (0, 3, "E", +1), (0, 3, "L", +1),
        (2, 1, "L", +1), (2, 2, "E", +1), (2, 3, "E", -1), (2, 3, "L", -1)],
    6: [(0, 0, "E", -1), (0, 0, "L", -2), (0, 1, "E", -1), (0, 1, "L", -1),
        (0, 3, "E", +1), (0, 3, "L", +1),
        (2, 1, "L", +1), (2, 2, "E", +1), (2, 3, "E", +1), (2, 3, "L", +1)],
    7: [(0, 0, "E", -1), (0, 0, "L", -2), (0, 1, "E", -1), (0, 1, "L", -1),
        (0, 3, "E", -1), (0, 3, "L", -1),
        (2, 1, "L", +1), (2, 2, "E", +1), (2, 3, "E", +1), (2, 3, "L", +1)],
}


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic generator."""

    n_per_class: int = 40
    noise_std: float = 0.1
    seed: int = 0
    ideal_utilization: dict = field(default_factory=lambda: dict(IDEAL_UTILIZATION))

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ConfigurationError("n_per_class must be positive")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be non-negative")
        grid = {0.0, 0.25, 0.5, 0.75, 1.0}
        for cls, util in self.ideal_utilization.items():
            util = tuple(util)
            if len(util) != N_SLICES or util[0] != 1.0:
                raise ConfigurationError(f"ideal utilization for class {cls} must start at 1, length {N_SLICES}")
            if any(u not in grid for u in util):
                raise ConfigurationError(f"ideal utilization for class {cls} off the quarter grid")
            if any(b > a for a, b in zip(util, util[1:])):
                raise ConfigurationError(f"ideal utilization for class {cls} must be non-increasing")


def _biphasic(center: int, amplitude: float) -> np.ndarray:
    """Mean-zero pulse: a positive Hann lobe then a mirrored negative lobe."""
    t = np.arange(N_TIMESTEPS, dtype=np.float64)
    out = np.zeros(N_TIMESTEPS)
    for sign, lobe_center in ((+1.0, center - _LOBE_HALF_WIDTH), (-1.0, center + _LOBE_HALF_WIDTH)):
        d = t - lobe_center
        inside = np.abs(d) < _LOBE_HALF_WIDTH
        out[inside] += sign * 0.5 * (1.0 + np.cos(np.pi * d[inside] / _LOBE_HALF_WIDTH))
    return amplitude * out


def class_prototypes() -> np.ndarray:
    """Noiseless (8, 4, 96) prototype array, one waveform per class."""
    protos = np.zeros((N_CLASSES, N_CHANNELS, N_TIMESTEPS))
    for cls, pulses in _PULSES.items():
        for channel, slice_idx, slot, amp in pulses:
            center = slice_idx * SLICE_LEN + _SLOT_CENTER[slot]
            protos[cls, channel] += _biphasic(center, float(amp))
    return protos


def ideal_savings(utilization) -> float:
    return (N_SLICES - float(np.sum(utilization))) / N_SLICES


def ideal_table(spec: SyntheticSpec) -> dict:
    """Ground-truth table: class -> ideal utilization and ideal savings."""
    return {
        str(cls): {
            "utilization": list(map(float, util)),
            "savings": ideal_savings(util),
        }
        for cls, util in sorted(spec.ideal_utilization.items())
    }


def _build_split(spec: SyntheticSpec, split: str, split_key: int) -> Dataset:
    protos = class_prototypes()
    rng = RngStream(spec.seed, "noise", split_key)
    n = spec.n_per_class * N_CLASSES
    values = np.empty((n, N_CHANNELS, N_TIMESTEPS))
    labels = np.empty(n, dtype=np.int64)
    i = 0
    for cls in range(N_CLASSES):
        for _ in range(spec.n_per_class):
            noise = rng.normal(0.0, spec.noise_std, (N_CHANNELS, N_TIMESTEPS)) if spec.noise_std > 0 else 0.0
            values[i] = protos[cls] + noise
            labels[i] = cls
            i += 1
    return Dataset(values, labels, N_CLASSES,
                   metadata={"source": "synthetic", "split": split,
                             "noise_std": spec.noise_std, "seed": spec.seed})


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset, dict]:
    """Generate (train, test, ideal-utilization table) for the benchmark."""
    train = _build_split(spec, "train", 0)
    test = _build_split(spec, "test", 1)
    return train, test, ideal_table(spec)
