"""Mixture membership, per-batch Gaussian mixture estimation and sample energy.

Everything here is expressed as graph operations so the energy and the
covariance penalty can be differentiated end to end.  Densities are
evaluated through Cholesky factors: quadratic forms by triangular solves and
log-determinants from the factor diagonal, never via an explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import tensorcore as tc
from .entmax import entmax_node
from .errors import ContractError, NumericDomainError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GmmStats:
    phi: np.ndarray     # (K,)
    mu: np.ndarray      # (K, d_h)
    sigma: np.ndarray   # (K, d_h, d_h), epsilon already added
    epsilon: float = 1e-6

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.phi > 0)

    def check(self) -> None:
        if abs(self.phi.sum() - 1.0) > 1e-8 or np.any(self.phi < 0):
            raise ContractError("mixture weights are not a distribution")
        if not np.allclose(self.sigma, np.swapaxes(self.sigma, -1, -2)):
            raise ContractError("covariances must be symmetric")
        for k in self.active:
            _cholesky(self.sigma[k], k)


def _cholesky(a: np.ndarray, k) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NumericDomainError(f"covariance of component {k} is not positive definite") from None


def membership(h: tc.Node, w: tc.Node, b: tc.Node, alpha: float = 1.5) -> tc.Node:
    """Soft assignment of each row of ``h`` (N x d_h) to K components."""
    logits = tc.add(tc.matmul(h, w), tc.broadcast_to(b, (h.shape[0], w.shape[1])))
    return entmax_node(logits, alpha)


# --------------------------------------------------------------------------
# differentiable density pieces


def mahalanobis(diff: tc.Node, sigma: tc.Node, labels=None) -> tc.Node:
    """q[n, k] = diff[n, k] @ inv(sigma[k]) @ diff[n, k]."""
    dv, sv = diff.value, sigma.value
    n, k_count, d = dv.shape
    solved = np.empty_like(dv)
    for k in range(k_count):
        low = _cholesky(sv[k], labels[k] if labels is not None else k)
        z = solve_triangular(low, dv[:, k, :].T, lower=True)
        solved[:, k, :] = solve_triangular(low.T, z, lower=False).T
    q = np.einsum("nkd,nkd->nk", dv, solved)

    def grad_diff(g):
        return 2.0 * g[..., None] * solved

    def grad_sigma(g):
        return -np.einsum("nk,nki,nkj->kij", g, solved, solved)

    return tc.Node(tc.tensor(q, copy=False), [(diff, grad_diff), (sigma, grad_sigma)], op="mahalanobis")


def logdet_spd(sigma: tc.Node, labels=None) -> tc.Node:
    sv = sigma.value
    out = np.empty(sv.shape[0])
    inv = np.empty_like(sv)
    eye = np.eye(sv.shape[-1])
    for k in range(sv.shape[0]):
        low = _cholesky(sv[k], labels[k] if labels is not None else k)
        out[k] = 2.0 * np.log(np.diag(low)).sum()
        z = solve_triangular(low, eye, lower=True)
        inv[k] = z.T @ z

    return tc.Node(tc.tensor(out, copy=False), [(sigma, lambda g: g[:, None, None] * inv)],
                   op="logdet")


# --------------------------------------------------------------------------
# estimation and energy as graphs


@dataclass
class GmmGraph:
    """Graph nodes for the active components of one estimation."""
    phi: tc.Node
    mu: tc.Node
    sigma: tc.Node
    active: np.ndarray
    k_total: int
    epsilon: float

    def freeze(self) -> GmmStats:
        phi = np.zeros(self.k_total)
        d = self.mu.shape[1]
        mu = np.zeros((self.k_total, d))
        sigma = np.broadcast_to(np.eye(d) * self.epsilon, (self.k_total, d, d)).copy()
        phi[self.active] = self.phi.value
        mu[self.active] = self.mu.value
        sigma[self.active] = self.sigma.value
        return GmmStats(phi, mu, sigma, self.epsilon)


def estimate_graph(h: tc.Node, y: tc.Node, epsilon: float = 1e-6) -> GmmGraph:
    n, d = h.shape
    k_total = y.shape[1]
    if n < 2:
        raise ContractError("GMM estimation needs at least two samples")
    col = y.value.sum(axis=0)
    active = np.flatnonzero(col > 0)
    if active.size == 0:
        raise NumericDomainError("all mixture components received zero membership")
    k = active.size
    ya = tc.take(y, active, axis=1) if k < k_total else y
    gsum = tc.sum(ya, axis=0)                                          # (k,)
    phi = tc.scale(gsum, 1.0 / n)
    mu = tc.div(tc.matmul(tc.transpose(ya), h),
                tc.broadcast_to(tc.reshape(gsum, (k, 1)), (k, d)))      # (k, d)
    diff = _centre(h, mu)                                              # (n, k, d)
    weighted = tc.mul(diff, tc.broadcast_to(tc.reshape(ya, (n, k, 1)), (n, k, d)))
    scatter = tc.matmul(tc.transpose(weighted, (1, 2, 0)), tc.transpose(diff, (1, 0, 2)))
    cov = tc.div(scatter, tc.broadcast_to(tc.reshape(gsum, (k, 1, 1)), (k, d, d)))
    cov = tc.scale(tc.add(cov, tc.transpose(cov)), 0.5)
    cov = tc.add(cov, tc.constant(np.broadcast_to(np.eye(d) * epsilon, (k, d, d))))
    return GmmGraph(phi, mu, cov, active, k_total, epsilon)


def _centre(h: tc.Node, mu: tc.Node) -> tc.Node:
    n, d = h.shape
    k = mu.shape[0]
    return tc.sub(tc.broadcast_to(tc.reshape(h, (n, 1, d)), (n, k, d)),
                  tc.broadcast_to(tc.reshape(mu, (1, k, d)), (n, k, d)))


def energy_graph(h: tc.Node, phi: tc.Node, mu: tc.Node, sigma: tc.Node, labels=None) -> tc.Node:
    """Per-row energy -log sum_k phi_k N(h | mu_k, sigma_k), shape (N,)."""
    n, d = h.shape
    k = mu.shape[0]
    q = mahalanobis(_centre(h, mu), sigma, labels)                              # (n, k)
    norm = tc.scale(tc.add(logdet_spd(sigma, labels), tc.constant(d * LOG_2PI)), -0.5)
    log_terms = tc.add(tc.scale(q, -0.5),
                       tc.broadcast_to(tc.reshape(tc.add(norm, tc.log(phi)), (1, k)), (n, k)))
    return tc.neg(tc.logsumexp(log_terms, axis=1))


def cov_penalty_graph(sigma: tc.Node) -> tc.Node:
    """Sum over components and dimensions of 1 / sigma_k[j, j]."""
    k, d, _ = sigma.shape
    diag = tc.sum(tc.mul(sigma, tc.constant(np.broadcast_to(np.eye(d), (k, d, d)))), axis=-1)
    if np.any(diag.value <= 0):
        raise NumericDomainError("non-positive covariance diagonal after regularisation")
    return tc.sum(tc.div(tc.constant(np.ones((k, d))), diag))


# --------------------------------------------------------------------------
# array-level conveniences


def estimate(h, y, epsilon: float = 1e-6) -> GmmStats:
    g = estimate_graph(tc.constant(h), tc.constant(y), epsilon)
    return g.freeze()


def energy(h, stats: GmmStats) -> np.ndarray | float:
    """Energy of one d_h-vector (returns float) or of each row of an N x d_h array."""
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    hb = h[None, :] if single else h
    act = stats.active
    if act.size == 0:
        raise ContractError("GMM statistics have no active component")
    e = energy_graph(tc.constant(hb), tc.constant(stats.phi[act]), tc.constant(stats.mu[act]),
                     tc.constant(stats.sigma[act]), labels=act).value
    return float(e[0]) if single else np.array(e)


def cov_penalty(stats: GmmStats) -> float:
    act = stats.active
    return float(cov_penalty_graph(tc.constant(stats.sigma[act])).value)
