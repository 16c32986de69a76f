"""Beta distribution machinery and the digamma function.

The Beta head of the filter policy needs three things: sampling, the
log-density, and the log-density gradient with respect to the two shape
parameters.  The gradient needs digamma, which is implemented here with
the classic upward recurrence (shift the argument to >= 6) followed by
the asymptotic Bernoulli series; absolute error is below 1e-10 on the
positive axis.  The log-Beta normalizer uses scipy's gammaln.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from ..errors import DomainError
from .rng import RngStream
from .tape import Tensor, _wrap

_SAMPLE_CLAMP = 1e-6

# Coefficients of the asymptotic expansion psi(x) ~ ln x - 1/(2x) - sum c_n / x^(2n).
_ASYMPTOTIC = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
)


def digamma(x):
    """Digamma psi(x) for x > 0, scalar or array, abs error <= 1e-10."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr <= 0.0):
        raise DomainError("digamma requires x > 0")
    scalar = arr.ndim == 0
    v = np.atleast_1d(arr).copy()
    acc = np.zeros_like(v)
    # Upward recurrence psi(x) = psi(x+1) - 1/x until the argument is >= 6.
    while True:
        small = v < 6.0
        if not small.any():
            break
        acc[small] -= 1.0 / v[small]
        v[small] += 1.0
    inv2 = 1.0 / (v * v)
    series = np.zeros_like(v)
    power = inv2.copy()
    for c in _ASYMPTOTIC:
        series += c * power
        power *= inv2
    result = acc + np.log(v) - 0.5 / v - series
    return float(result[0]) if scalar else result.reshape(arr.shape)


def beta_sample(alpha, beta, rng: RngStream):
    """Draw from Beta(alpha, beta), clamped inside the open unit interval."""
    a = np.asarray(alpha, dtype=np.float64)
    b = np.asarray(beta, dtype=np.float64)
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise DomainError("beta_sample requires positive shape parameters")
    draw = rng.beta(a, b)
    return np.clip(draw, _SAMPLE_CLAMP, 1.0 - _SAMPLE_CLAMP)


def beta_log_prob(x, alpha, beta) -> Tensor:
    """Log-density of Beta(alpha, beta) at x, differentiable in alpha and beta.

    x is treated as a constant (the sampled action); alpha and beta may be
    tape tensors.  Gradients use the closed forms
    d/da = ln x - psi(a) + psi(a+b) and symmetrically for b.
    """
    xv = np.asarray(x, dtype=np.float64)
    if np.any(xv <= 0.0) or np.any(xv >= 1.0):
        raise DomainError("beta_log_prob requires x in the open interval (0, 1)")
    a, b = _wrap(alpha), _wrap(beta)
    av, bv = a.values, b.values
    if np.any(av <= 0.0) or np.any(bv <= 0.0):
        raise DomainError("beta_log_prob requires positive shape parameters")
    log_x = np.log(xv)
    log_1mx = np.log1p(-xv)
    log_norm = gammaln(av) + gammaln(bv) - gammaln(av + bv)
    out_vals = (av - 1.0) * log_x + (bv - 1.0) * log_1mx - log_norm

    def backward(g):
        psi_ab = digamma(av + bv)
        if a.requires_grad:
            a._accumulate(g * (log_x - digamma(av) + psi_ab))
        if b.requires_grad:
            b._accumulate(g * (log_1mx - digamma(bv) + psi_ab))

    return Tensor(out_vals, parents=(a, b), backward=backward)


def beta_mean(alpha, beta):
    """Deterministic action used at inference time: the distribution mean."""
    a = np.asarray(alpha, dtype=np.float64)
    b = np.asarray(beta, dtype=np.float64)
    return a / (a + b)
