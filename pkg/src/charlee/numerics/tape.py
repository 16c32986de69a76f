"""Reverse-mode differentiable operations on float64 numpy arrays.

Each forward call builds a node of a lightweight operation tape; calling
:meth:`Tensor.backward` on a scalar result walks the recorded graph in
reverse topological order and accumulates gradients into every tensor
created with ``requires_grad=True``.  Only the operations the models in
this package actually use are provided: dense layers, 1-D convolution
(centered or causal padding), elementwise activations, reductions, and
numerically stabilized classification losses.

All values are float64; gradient correctness is asserted against central
finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, InputError

# Multiply-accumulate counter for convolutions.  Used to assert that
# skipped channel groups really cost nothing.  Single-threaded use only.
_conv_macs = 0


def conv_mac_count() -> int:
    return _conv_macs


def reset_conv_mac_count() -> None:
    global _conv_macs
    _conv_macs = 0


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus the tape bookkeeping needed for backprop."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, values, requires_grad: bool = False, parents=(), backward=None, name: str = ""):
        self.values = _as_array(values)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def backward(self, seed=None) -> None:
        """Backpropagate from this tensor; seed defaults to ones."""
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.values) if seed is None else _as_array(seed))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # Release intermediate gradients; leaves keep theirs.
        for node in topo:
            if node._backward is not None:
                node.grad = None

    # Operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_vals = a.values + b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.values.shape))

    return Tensor(out_vals, parents=(a, b), backward=backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_vals = a.values * b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.values, a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.values, b.values.shape))

    return Tensor(out_vals, parents=(a, b), backward=backward)


def where(mask, a, b) -> Tensor:
    """Elementwise select: mask is a boolean constant array."""
    mask = np.asarray(mask, dtype=bool)
    a, b = _wrap(a), _wrap(b)
    out_vals = np.where(mask, a.values, b.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.where(mask, g, 0.0), a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.where(mask, 0.0, g), b.values.shape))

    return Tensor(out_vals, parents=(a, b), backward=backward)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = _wrap(a), _wrap(b)
    take_a = a.values >= b.values
    out_vals = np.where(take_a, a.values, b.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.where(take_a, g, 0.0), a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.where(take_a, 0.0, g), b.values.shape))

    return Tensor(out_vals, parents=(a, b), backward=backward)


def minimum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    take_a = a.values <= b.values
    out_vals = np.where(take_a, a.values, b.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.where(take_a, g, 0.0), a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.where(take_a, 0.0, g), b.values.shape))

    return Tensor(out_vals, parents=(a, b), backward=backward)


def relu(x) -> Tensor:
    x = _wrap(x)
    pos = x.values > 0  # gradient at exactly 0 is defined as 0
    out_vals = np.where(pos, x.values, 0.0)

    def backward(g):
        x._accumulate(np.where(pos, g, 0.0))

    return Tensor(out_vals, parents=(x,), backward=backward)


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    v = x.values
    out_vals = np.empty_like(v)
    p = v >= 0
    out_vals[p] = 1.0 / (1.0 + np.exp(-v[p]))
    e = np.exp(v[~p])
    out_vals[~p] = e / (1.0 + e)

    def backward(g):
        x._accumulate(g * out_vals * (1.0 - out_vals))

    return Tensor(out_vals, parents=(x,), backward=backward)


def softplus(x) -> Tensor:
    """log(1 + exp(x)), overflow-safe."""
    x = _wrap(x)
    v = x.values
    out_vals = np.logaddexp(0.0, v)

    def backward(g):
        s = np.empty_like(v)
        p = v >= 0
        s[p] = 1.0 / (1.0 + np.exp(-v[p]))
        e = np.exp(v[~p])
        s[~p] = e / (1.0 + e)
        x._accumulate(g * s)

    return Tensor(out_vals, parents=(x,), backward=backward)


def log(x) -> Tensor:
    x = _wrap(x)
    out_vals = np.log(x.values)

    def backward(g):
        x._accumulate(g / x.values)

    return Tensor(out_vals, parents=(x,), backward=backward)


def tsum(x, axis=None) -> Tensor:
    x = _wrap(x)
    out_vals = x.values.sum(axis=axis)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.values.shape).copy())
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.values.shape).copy())

    return Tensor(out_vals, parents=(x,), backward=backward)


def tmean(x, axis=None) -> Tensor:
    x = _wrap(x)
    n = x.values.size if axis is None else x.values.shape[axis]
    return mul(tsum(x, axis=axis), 1.0 / n)


def tmax(x, axis: int) -> Tensor:
    """Max along one axis; gradient routes to the (first) argmax position."""
    x = _wrap(x)
    idx = np.argmax(x.values, axis=axis)
    out_vals = np.take_along_axis(x.values, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.values)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        x._accumulate(gx)

    return Tensor(out_vals, parents=(x,), backward=backward)


def tmin(x, axis: int) -> Tensor:
    """Min along one axis; gradient routes to the (first) argmin position."""
    x = _wrap(x)
    idx = np.argmin(x.values, axis=axis)
    out_vals = np.take_along_axis(x.values, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.values)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        x._accumulate(gx)

    return Tensor(out_vals, parents=(x,), backward=backward)


def narrow(x, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice along one axis."""
    x = _wrap(x)
    slicer = [slice(None)] * x.values.ndim
    slicer[axis] = slice(start, start + size)
    slicer = tuple(slicer)
    out_vals = x.values[slicer]

    def backward(g):
        gx = np.zeros_like(x.values)
        gx[slicer] = g
        x._accumulate(gx)

    return Tensor(out_vals, parents=(x,), backward=backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out_vals = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.values.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor(out_vals, parents=tuple(tensors), backward=backward)


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    out_vals = x.values.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.values.shape))

    return Tensor(out_vals, parents=(x,), backward=backward)


def dense_forward(x, weights, bias) -> Tensor:
    """Affine map ``x @ weights.T + bias`` for batched row vectors.

    x: (B, n_in); weights: (n_out, n_in); bias: (n_out,).
    """
    x, weights, bias = _wrap(x), _wrap(weights), _wrap(bias)
    if x.values.ndim != 2 or weights.values.ndim != 2:
        raise ConfigurationError("dense_forward expects 2-D input and weights")
    if x.values.shape[1] != weights.values.shape[1]:
        raise ConfigurationError(
            f"dense_forward shape mismatch: input {x.values.shape} vs weights {weights.values.shape}"
        )
    if bias.values.shape != (weights.values.shape[0],):
        raise ConfigurationError(
            f"dense_forward bias shape {bias.values.shape} incompatible with weights {weights.values.shape}"
        )
    out_vals = x.values @ weights.values.T + bias.values

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weights.values)
        if weights.requires_grad:
            weights._accumulate(g.T @ x.values)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    return Tensor(out_vals, parents=(x, weights, bias), backward=backward)


def _conv_cols(padded: np.ndarray, k: int) -> np.ndarray:
    """(B, C, P) padded input -> (B, T_out, C*K) window matrix."""
    win = np.lib.stride_tricks.sliding_window_view(padded, k, axis=2)  # (B, C, T_out, K)
    b, c, t_out, _ = win.shape
    return win.transpose(0, 2, 1, 3).reshape(b, t_out, c * k)


def conv1d_forward(x, kernels, bias=None, padding: str = "same") -> Tensor:
    """1-D convolution (cross-correlation) with length-preserving padding.

    x: (B, C_in, T); kernels: (C_out, C_in, K); bias: (C_out,) or None.
    ``padding="same"`` centers the kernel (K must be odd); ``"causal"``
    left-pads by K-1 so each output depends only on current and past
    inputs, which is what makes slice-incremental encoding exact.
    """
    global _conv_macs
    x, kernels = _wrap(x), _wrap(kernels)
    if x.values.ndim != 3 or kernels.values.ndim != 3:
        raise ConfigurationError("conv1d_forward expects (B, C_in, T) input and (C_out, C_in, K) kernels")
    b, c_in, t = x.values.shape
    c_out, kc_in, k = kernels.values.shape
    if t < 1:
        raise InputError("conv1d_forward: empty input")
    if kc_in != c_in:
        raise ConfigurationError(f"conv1d_forward channel mismatch: input {c_in}, kernels {kc_in}")
    if padding == "same":
        if k % 2 == 0:
            raise ConfigurationError("conv1d_forward: kernel length must be odd for same padding")
        pads = (k // 2, k // 2)
    elif padding == "causal":
        pads = (k - 1, 0)
    elif padding == "valid":
        if t < k:
            raise InputError(f"conv1d_forward: input length {t} shorter than kernel {k}")
        pads = (0, 0)
    else:
        raise ConfigurationError(f"conv1d_forward: unknown padding {padding!r}")

    padded = np.pad(x.values, ((0, 0), (0, 0), pads))
    t_out = padded.shape[2] - k + 1
    cols = _conv_cols(padded, k)  # (B, T_out, C_in*K)
    w2 = kernels.values.reshape(c_out, c_in * k)
    out_vals = (cols @ w2.T).transpose(0, 2, 1)  # (B, C_out, T_out)
    if bias is not None:
        bias = _wrap(bias)
        out_vals = out_vals + bias.values[None, :, None]
    _conv_macs += b * t_out * c_in * k * c_out

    def backward(g):
        # g: (B, C_out, T)
        gt = g.transpose(0, 2, 1)  # (B, T, C_out)
        if kernels.requires_grad:
            gw = np.tensordot(gt, cols, axes=([0, 1], [0, 1]))  # (C_out, C_in*K)
            kernels._accumulate(gw.reshape(c_out, c_in, k))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1)))
            gcols = _conv_cols(gp, k)  # (B, T_out+K-1, C_out*K)
            wflip = kernels.values[:, :, ::-1].transpose(0, 2, 1).reshape(c_out * k, c_in)
            dx_pad = (gcols @ wflip).transpose(0, 2, 1)  # (B, C_in, T_out+K-1)
            left = pads[0]
            x._accumulate(dx_pad[:, :, left:left + t])

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor(out_vals, parents=parents, backward=backward)


def global_avg_pool(x) -> Tensor:
    """(B, C, T) -> (B, C) time average."""
    x = _wrap(x)
    t = x.values.shape[2]
    out_vals = x.values.mean(axis=2)

    def backward(g):
        x._accumulate(np.repeat(g[:, :, None], t, axis=2) / t)

    return Tensor(out_vals, parents=(x,), backward=backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Per-sample cross entropy, max-stabilized.

    logits: (B, K); labels: (B,) integer class indices.  Returns (B,).
    """
    logits = _wrap(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.values.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise InputError(f"softmax_cross_entropy: label out of range for {k} classes")
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    out_vals = lse - z[np.arange(b), labels]
    probs = np.exp(z - lse[:, None])

    def backward(g):
        d = probs.copy()
        d[np.arange(b), labels] -= 1.0
        logits._accumulate(d * g[:, None])

    return Tensor(out_vals, parents=(logits,), backward=backward)


def binary_cross_entropy(p, targets, eps: float = 1e-6) -> Tensor:
    """Per-element BCE with probability clamping; targets are constants."""
    p = _wrap(p)
    t = _as_array(targets)
    pc = np.clip(p.values, eps, 1.0 - eps)
    out_vals = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))
    inside = (p.values > eps) & (p.values < 1.0 - eps)

    def backward(g):
        d = (pc - t) / (pc * (1.0 - pc))
        p._accumulate(np.where(inside, d, 0.0) * g)

    return Tensor(out_vals, parents=(p,), backward=backward)


def assert_finite(x: Tensor, label: str = "") -> Tensor:
    if not np.all(np.isfinite(x.values)):
        from ..errors import NumericFailure

        raise NumericFailure(f"non-finite values in {label or 'tensor'}")
    return x
