"""Deterministic random streams.

All randomness in the package flows through :class:`RngStream`, a thin
wrapper around numpy's counter-based Philox bit generator.  Streams are
derived from a 64-bit root seed plus a component label (and optional
integer subkeys, e.g. an epoch number), so independent parts of the
pipeline (init, data shuffling, Beta sampling, noise) never share or
race a generator, and the draw sequence for a given (seed, label, keys)
tuple is identical across runs and platforms.
"""

from __future__ import annotations

import numpy as np

# Fixed label -> subkey registry; labels are hashed by position, not by
# Python's randomized hash, so streams are stable across processes.
_LABELS = (
    "init",
    "shuffle",
    "beta",
    "noise",
    "split",
    "episode",
    "misc",
)


def _label_id(label: str) -> int:
    try:
        return _LABELS.index(label)
    except ValueError:
        raise ValueError(f"unknown rng stream label {label!r}; add it to rng._LABELS") from None


class RngStream:
    """A named, seeded random stream with reproducible draws.

    Parameters
    ----------
    seed : int
        Root seed (64-bit).
    label : str
        Component label, one of the registered stream names.
    keys : int
        Optional extra subkeys (e.g. epoch index, split index).
    """

    def __init__(self, seed: int, label: str = "misc", *keys: int):
        self.seed = int(seed)
        self.label = label
        self.keys = tuple(int(k) for k in keys)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(_label_id(label), *self.keys))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def generator(self) -> np.random.Generator:
        return self._gen

    # Convenience passthroughs used throughout the package.
    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def beta(self, a, b, size=None):
        return self._gen.beta(a, b, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)


def derive(seed: int, label: str, *keys: int) -> RngStream:
    """Shorthand for RngStream(seed, label, *keys)."""
    return RngStream(seed, label, *keys)
