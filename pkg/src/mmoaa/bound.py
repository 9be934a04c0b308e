"""Optimality-gap bound for multi-model training under over-the-air uplink.

Per frame ``n`` with learning rate ``eta_n``::

    G_n = 4 (1 - eta_n lam)^(2 J M)
    C_n = 4 eta_n^2 J^2 (M^2 phi + K^2 delta) + 8 K sd2
    H_n = 4 r M K sum_i (I_i + su2) / (sum_{k in K_i} sqrt(p_k) |h_k^H w_i|)^2

and after ``S`` frames::

    gap <= Gamma_m prod_n G_n + sum_{n<S-1} (C_n + H_n) prod_{s>n} G_s + C_{S-1} + H_{S-1}

where ``sd2`` and ``su2`` are the noise variances scaled by ``D_max / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .beamform import BeamformerState, _check_denominators, _per_group_terms
from .channel import ChannelSet
from .errors import ConfigurationError
from .learning import LOGISTIC, Model, sample_loss_grad
from .scheduler import Schedule


@dataclass(frozen=True)
class BoundConstants:
    L: float
    lam: float
    r: float
    phi: float
    delta: float
    eta: np.ndarray
    J: int
    M: int
    K: int
    Gamma: np.ndarray
    sigma2_d_tilde: float
    sigma2_u_tilde: float
    c: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "eta", np.atleast_1d(np.asarray(self.eta, dtype=float)))
        object.__setattr__(self, "Gamma", np.atleast_1d(np.asarray(self.Gamma, dtype=float)))
        c = np.full(self.K, 1.0 / self.K) if self.c is None else np.asarray(self.c, dtype=float)
        object.__setattr__(self, "c", c)
        scalars = (self.L, self.lam, self.r, self.phi, self.delta, self.sigma2_d_tilde,
                   self.sigma2_u_tilde)
        if min(scalars) < 0 or np.any(self.eta < 0) or np.any(self.Gamma < 0):
            raise ConfigurationError("bound constants must be non-negative")
        if np.any((c < 0) | (c > 1)):
            raise ConfigurationError("c_k must lie in [0, 1]")

    def eta_at(self, n) -> float:
        """Learning rate of frame ``n``; the last entry repeats."""
        return float(self.eta[min(n, self.eta.size - 1)])

    def check_step_sizes(self, S):
        for n in range(S):
            if self.lam > 0 and self.eta_at(n) * self.lam >= 1:
                raise ConfigurationError(
                    f"eta_{n}={self.eta_at(n)} violates eta < 1/lambda (lambda={self.lam})")


def uplink_error_sum(state: BeamformerState, channels: ChannelSet, schedule: Schedule, su2) -> float:
    gains = np.abs(state.w.conj() @ channels.h.T) ** 2
    interference, coherent, _ = _per_group_terms(gains, state.p, schedule)
    _check_denominators(coherent)
    return float(np.sum((interference + su2) / coherent))


def error_bound(state, channels, schedule, consts: BoundConstants) -> float:
    """Bound on the accumulated per-frame error ``E||e_{m,n}||^2``."""
    s = uplink_error_sum(state, channels, schedule, consts.sigma2_u_tilde)
    return consts.r * consts.M * consts.K * s + 2 * consts.K * consts.sigma2_d_tilde


def h_term(state, channels, schedule, consts: BoundConstants) -> float:
    s = uplink_error_sum(state, channels, schedule, consts.sigma2_u_tilde)
    return 4 * consts.r * consts.M * consts.K * s


def contraction(consts: BoundConstants, n) -> float:
    """``G_n``; strictly positive whenever ``eta_n < 1 / lam``."""
    return 4.0 * (1.0 - consts.eta_at(n) * consts.lam) ** (2 * consts.J * consts.M)


def drift(consts: BoundConstants, n) -> float:
    """``C_n``: local-training drift plus downlink noise."""
    eta = consts.eta_at(n)
    return (4 * eta ** 2 * consts.J ** 2 * (consts.M ** 2 * consts.phi + consts.K ** 2 * consts.delta)
            + 8 * consts.K * consts.sigma2_d_tilde)


def gap_bound(h_values, consts: BoundConstants, S, m) -> float:
    """Upper bound on ``E||theta_{m,SM} - theta*_m||^2`` after ``S`` frames."""
    if S < 1:
        raise ValueError("S must be at least 1")
    h_values = np.asarray(h_values, dtype=float)
    if h_values.size < S:
        raise ValueError(f"need {S} per-frame H values, got {h_values.size}")
    consts.check_step_sizes(S)
    G = np.array([contraction(consts, n) for n in range(S)])
    C = np.array([drift(consts, n) for n in range(S)])
    # tail[n] = prod_{s > n} G_s
    tail = np.append(np.cumprod(G[::-1])[::-1][1:], 1.0)
    return float(consts.Gamma[m - 1] * np.prod(G) + np.dot(C + h_values[:S], tail))


def logistic_smoothness(model: Model, X) -> float:
    """Smoothness constant of the regularized mean softmax loss.

    The softmax Hessian ``diag(p) - p p^T`` has spectral norm at most 1/2,
    so ``L <= l2 + lambda_max([X 1]^T [X 1] / n) / 2``.
    """
    if model.kind != LOGISTIC:
        raise ValueError("smoothness bound is only available for the logistic model")
    Xa = np.hstack([np.asarray(X, dtype=float), np.ones((len(X), 1))])
    top = np.linalg.eigvalsh(Xa.T @ Xa / len(X))[-1]
    return float(model.l2 + 0.5 * top)


def solve_optimum(model: Model, X, y, theta0=None, tol=1e-10, method="lbfgs",
                  max_iter=200_000) -> np.ndarray:
    """Minimizer of the regularized full-batch loss.

    ``method="lbfgs"`` runs L-BFGS to gradient norm ``tol``; ``method="gd"``
    runs plain gradient descent with step ``1/L`` (slow, kept as a
    reference).
    """
    X = np.asarray(X, dtype=float)
    theta = np.zeros(model.dim) if theta0 is None else np.array(theta0, dtype=float)
    if method == "lbfgs":
        res = optimize.minimize(lambda th: sample_loss_grad(model, th, X, y), theta, jac=True,
                                method="L-BFGS-B",
                                options={"gtol": tol, "ftol": 0.0, "maxiter": max_iter})
        return res.x
    if method != "gd":
        raise ValueError(f"unknown method {method!r}")
    step = 1.0 / logistic_smoothness(model, X)
    for _ in range(max_iter):
        _, g = sample_loss_grad(model, theta, X, y)
        if np.linalg.norm(g) < tol:
            break
        theta -= step * g
    return theta


def estimate_divergence(model: Model, thetas, shards, X, y, batch_size, rng, n_batches=8):
    """Sample estimates of the gradient-divergence and mini-batch variance bounds.

    ``phi`` is the largest ``sum_k c_k ||grad F - grad F^k||^2`` (uniform
    ``c_k``) over the probe points ``thetas``; ``delta`` the largest mean
    squared deviation of a mini-batch gradient from its shard gradient.
    """
    phi = 0.0
    delta = 0.0
    for theta in thetas:
        _, g = sample_loss_grad(model, theta, X, y)
        spread = 0.0
        for idx in shards:
            _, gk = sample_loss_grad(model, theta, X[idx], y[idx])
            spread += np.sum((g - gk) ** 2) / len(shards)
            dev = 0.0
            for _ in range(n_batches):
                b = rng.choice(idx, size=batch_size, replace=False)
                _, gb = sample_loss_grad(model, theta, X[b], y[b])
                dev += np.sum((gk - gb) ** 2) / n_batches
            delta = max(delta, dev)
        phi = max(phi, spread)
    return float(phi), float(delta)
