"""alpha-entmax: the regularised simplex projection behind sparse attention.

For scores ``x`` the transform returns the distribution ``p`` maximising
``p @ x + H_alpha(p)`` with ``H_alpha`` the Tsallis entropy.  ``alpha = 1``
is softmax, ``alpha = 2`` is sparsemax, and values in between give sparse
outputs with smooth corners.  All functions act on the last axis by default
and are vectorised over any leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .errors import ContractError, NumericDomainError


@dataclass(frozen=True)
class EntmaxConfig:
    alpha: float = 1.5
    bisection_iters: int = 50
    tol: float = 1e-9

    def __post_init__(self):
        if not 1.0 <= self.alpha <= 2.0:
            raise ContractError(f"alpha must lie in [1, 2], got {self.alpha}")
        if self.bisection_iters < 1 or self.tol <= 0:
            raise ContractError("bisection_iters and tol must be positive")


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sparsemax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Euclidean projection onto the simplex via the sorted-threshold rule."""
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    srt = -np.sort(-x, axis=-1)
    css = np.cumsum(srt, axis=-1) - 1.0
    ks = np.arange(1, n + 1)
    support = srt - css / ks > 0
    k = support.sum(axis=-1, keepdims=True)
    tau = np.take_along_axis(css, k - 1, axis=-1) / k
    return np.moveaxis(np.maximum(x - tau, 0.0), -1, axis)


def _bisect(x: np.ndarray, alpha: float, iters: int) -> np.ndarray:
    n = x.shape[-1]
    z = (alpha - 1.0) * (x - x.max(axis=-1, keepdims=True))
    power = 1.0 / (alpha - 1.0)
    # sum(p) >= 1 at tau_lo (largest coordinate alone gives 1), <= 1 at tau_hi
    tau_lo = np.full(z.shape[:-1] + (1,), -1.0)
    width = 1.0 - (1.0 / n) ** (alpha - 1.0)
    p = None
    for _ in range(iters):
        width /= 2.0
        tau_mid = tau_lo + width
        p = np.maximum(z - tau_mid, 0.0) ** power
        tau_lo = np.where(p.sum(axis=-1, keepdims=True) >= 1.0, tau_mid, tau_lo)
    p = np.maximum(z - tau_lo, 0.0) ** power
    return p / p.sum(axis=-1, keepdims=True)


def entmax(x, alpha: float = 1.5, axis: int = -1, cfg: EntmaxConfig | None = None) -> np.ndarray:
    """alpha-entmax of ``x`` along ``axis``.

    >>> entmax(np.array([3.0, 0.0]), alpha=2.0)
    array([1., 0.])
    """
    cfg = cfg or EntmaxConfig(alpha=alpha)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[axis] < 1:
        raise ContractError("entmax needs at least one coordinate")
    if not np.isfinite(x).all():
        raise NumericDomainError("entmax input contains non-finite values")
    a = cfg.alpha
    if a == 1.0:
        return softmax(x, axis)
    if a == 2.0:
        return sparsemax(x, axis)
    moved = np.moveaxis(x, axis, -1)
    return np.moveaxis(_bisect(moved, a, cfg.bisection_iters), -1, axis)


def entmax_jacobian_vp(x, p, alpha: float, upstream, axis: int = -1) -> np.ndarray:
    """J^T @ upstream for p = entmax(x); J is symmetric so this is also J @ upstream.

    On the support ``s_i = p_i ** (2 - alpha)`` and
    ``J = diag(s) - s s^T / sum(s)``; off-support rows and columns vanish.
    """
    p = np.asarray(p, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)
    s = np.where(p > 0, p ** (2.0 - alpha), 0.0)
    ssum = s.sum(axis=axis, keepdims=True)
    assert np.all(ssum > 0), "entmax output has empty support"
    su = s * u
    return su - s * su.sum(axis=axis, keepdims=True) / ssum


def tsallis_entropy(p, alpha: float) -> float:
    """Tsallis alpha-entropy of a distribution; Shannon entropy at alpha = 1."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -1e-6) or abs(p.sum() - 1.0) > 1e-6:
        raise ContractError("tsallis_entropy expects a point on the simplex")
    p = np.clip(p, 0.0, None)
    if alpha == 1.0:
        nz = p[p > 0]
        return float(-(nz * np.log(nz)).sum())
    return float((p - p ** alpha).sum() / (alpha * (alpha - 1.0)))


def entmax_node(x: tc.Node, alpha: float, axis: int = -1,
                cfg: EntmaxConfig | None = None) -> tc.Node:
    """Graph op wrapping :func:`entmax` with its exact Jacobian."""
    xv = x.value
    p = entmax(xv, alpha, axis=axis, cfg=cfg)
    a = (cfg or EntmaxConfig(alpha=alpha)).alpha

    def grad(g):
        return entmax_jacobian_vp(xv, p, a, g, axis=axis)

    return tc.Node(tc.tensor(p, copy=False), [(x, grad)], op=f"entmax{a:g}")
