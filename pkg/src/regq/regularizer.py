"""Policy regularizers, their convex conjugates, and the smooth truncation map.

Both regularizers act on the probability simplex over actions:

* Shannon: ``G(p) = sum_a p_a log p_a`` (negative entropy)
* Tsallis: ``G(p) = (||p||^2 - 1) / 2``

All vector-valued functions accept either a single row of action values or a
stacked array whose last axis indexes actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

SHANNON = "shannon"
TSALLIS = "tsallis"

# Lipschitz constant of the conjugate gradient (times tau). The softmax and the
# Euclidean simplex projection are both 1-Lipschitz, so 1 is safe for both.
L_G = 1.0


@dataclass(frozen=True)
class Regularizer:
    kind: str
    tau: float
    num_actions: int

    def __post_init__(self):
        if self.kind not in (SHANNON, TSALLIS):
            raise InvalidArgument(f"unknown regularizer kind {self.kind!r}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise InvalidArgument("tau must be positive and finite")
        if self.num_actions < 1:
            raise InvalidArgument("need at least one action")

    @property
    def bound_B(self) -> float:
        """Tight bound on ``|G(p)|`` over the simplex."""
        n = self.num_actions
        if self.kind == SHANNON:
            return math.log(n)
        return 0.5 * (1.0 - 1.0 / n)

    def G(self, p) -> np.ndarray:
        """Unscaled regularizer value ``G(p)`` (no tau)."""
        p = np.asarray(p, dtype=float)
        if self.kind == SHANNON:
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(p > 0, p * np.log(p), 0.0)
            return terms.sum(axis=-1)
        return 0.5 * (np.sum(p * p, axis=-1) - 1.0)


@dataclass(frozen=True)
class SmoothTruncation:
    """``K(x) = delta * tanh(x / delta)``; ``delta = inf`` is the identity."""

    delta: float = math.inf

    def __post_init__(self):
        if not self.delta > 0 or math.isnan(self.delta):
            raise InvalidArgument("delta must be positive (inf allowed)")

    @property
    def finite(self) -> bool:
        return math.isfinite(self.delta)


def _check_rows(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim == 0 or q.shape[-1] == 0:
        raise InvalidArgument("action-value vector must have at least one entry")
    if not np.all(np.isfinite(q)):
        raise InvalidArgument("non-finite action values")
    return q


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex.

    Sort-based, O(n log n) per row.
    """
    v = np.asarray(v, dtype=float)
    # the projection commutes with constant shifts; centring on the row max
    # keeps the cumulative sums small and the output sum accurate
    v = v - np.max(v, axis=-1, keepdims=True)
    n = v.shape[-1]
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    k = np.arange(1, n + 1)
    cond = u - css / k > 0
    # number of active coordinates: last index where cond holds
    rho = n - np.argmax(cond[..., ::-1], axis=-1)
    thresh = np.take_along_axis(css, (rho - 1)[..., None], axis=-1) / rho[..., None]
    return np.maximum(v - thresh, 0.0)


def logsumexp(x) -> np.ndarray:
    m = np.max(x, axis=-1)
    return m + np.log(np.sum(np.exp(x - m[..., None]), axis=-1))


def softmax(x) -> np.ndarray:
    z = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def conjugate_value(reg: Regularizer, q) -> np.ndarray | float:
    """``max_p <p, q> - tau G(p)`` over the simplex, row-wise."""
    q = _check_rows(q)
    tau = reg.tau
    if reg.kind == SHANNON:
        out = tau * logsumexp(q / tau)
    else:
        p = project_simplex(q / tau)
        out = np.sum(p * q, axis=-1) - tau * reg.G(p)
    return float(out) if np.ndim(out) == 0 else out


def conjugate_policy(reg: Regularizer, q) -> np.ndarray:
    """Gradient of the conjugate: the regularized greedy distribution."""
    q = _check_rows(q)
    if reg.kind == SHANNON:
        return softmax(q / reg.tau)
    return project_simplex(q / reg.tau)


def truncate(tr: SmoothTruncation, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("non-finite input to truncation")
    out = x if not tr.finite else tr.delta * np.tanh(x / tr.delta)
    return float(out) if out.ndim == 0 else out


def truncate_deriv(tr: SmoothTruncation, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("non-finite input to truncation")
    if not tr.finite:
        out = np.ones_like(x)
    else:
        out = 1.0 - np.tanh(x / tr.delta) ** 2
    return float(out) if out.ndim == 0 else out


def truncated_conjugate(reg: Regularizer, tr: SmoothTruncation, q):
    return truncate(tr, conjugate_value(reg, q))


def truncated_conjugate_with_grad(reg: Regularizer, tr: SmoothTruncation, q):
    """Return ``(K(G*(q)), z, pi)`` where ``z * pi`` is the gradient in ``q``.

    ``z = 1 - K(G*(q))^2 / delta^2`` is the truncation slope at ``G*(q)``.
    """
    v = conjugate_value(reg, q)
    k = truncate(tr, v)
    z = truncate_deriv(tr, v)
    return k, z, conjugate_policy(reg, q)


def truncation_gap(delta: float, x: float) -> float:
    """``x - K_delta(x)``."""
    return x - truncate(SmoothTruncation(delta), x)
