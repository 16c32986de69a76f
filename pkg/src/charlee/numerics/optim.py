"""Named parameter store and the adaptive-moment optimizer."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, NumericFailure
from .rng import RngStream
from .tape import Tensor


class ParamStore:
    """Ordered mapping of name -> trainable Tensor.

    Single-writer: gradient accumulation and optimizer steps must not run
    concurrently on the same store.  Forward passes that only read values
    are safe to share.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def glorot(self, name: str, shape: tuple, fan_in: int, fan_out: int, rng: RngStream) -> Tensor:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.create(name, rng.uniform(-limit, limit, shape))

    def zeros(self, name: str, shape: tuple) -> Tensor:
        return self.create(name, np.zeros(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def check_finite(self) -> None:
        for name, t in self._params.items():
            if not np.all(np.isfinite(t.values)):
                raise NumericFailure(f"parameter {name!r} contains non-finite values")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, values in state.items():
            if name not in self._params:
                raise ConfigurationError(f"unknown parameter {name!r} in state dict")
            if self._params[name].values.shape != values.shape:
                raise ConfigurationError(f"shape mismatch loading parameter {name!r}")
            self._params[name].values = np.asarray(values, dtype=np.float64).copy()


class FrozenParams:
    """Read-only view of a ParamStore exposing constant tensors.

    Forward passes through a frozen view record no tape, which makes
    inference-mode rollouts cheap and safe to run concurrently.
    """

    def __init__(self, store: ParamStore):
        self._tensors = {name: Tensor(t.values) for name, t in store.items()}

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, store: ParamStore, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 lr_multipliers: dict[str, float] | None = None):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        # name-prefix -> multiplier on the base learning rate
        self.lr_multipliers = dict(lr_multipliers or {})
        self.step_count = 0
        self.m = {name: np.zeros_like(t.values) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.values) for name, t in store.items()}

    def rate_for(self, name: str, base: float) -> float:
        for prefix, mult in self.lr_multipliers.items():
            if name.startswith(prefix):
                return base * mult
        return base


def adam_step(store: ParamStore, state: AdamState, learning_rate: float | None = None) -> None:
    """One bias-corrected adaptive-moment update; gradients are zeroed after.

    Parameters with no accumulated gradient this step are treated as having
    zero gradient (their moments still decay).
    """
    lr = state.learning_rate if learning_rate is None else float(learning_rate)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, param in store.items():
        g = param.grad if param.grad is not None else np.zeros_like(param.values)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        param.values -= state.rate_for(name, lr) * (m / c1) / (np.sqrt(v / c2) + state.eps)
    store.zero_grads()
