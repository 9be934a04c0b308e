"""Joint transmit-power / receive-beamforming design for one frame.

The per-frame problem minimizes the sum over groups of inverse SINRs

    sum_i (sum_{q not in K_i} p_q |f_q^H w_i|^2 + 1) / sum_{k in K_i} p_k |f_k^H w_i|^2

with ``f_k = h_k / sigma_u_tilde``, ``||w_i|| = 1`` and ``0 <= p_k <= cap_k``.
It is solved by block coordinate descent: every ``w_i`` is the top
eigenvector of a Hermitian pencil, and every group's power vector has a
closed form from the KKT conditions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .channel import ChannelSet
from .errors import DegenerateError
from .scheduler import Schedule

log = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-9


def scaled_noise(sigma2, D_max):
    """Noise variance accumulated over a full model transmission, ``sigma2 * D_max / 2``."""
    return sigma2 * D_max / 2.0


@dataclass
class BeamformerState:
    """Receive beamformers ``w`` (row ``i - 1`` is group ``i``) and device powers ``p``."""

    w: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=complex))
        self.p = np.asarray(self.p, dtype=float)

    @property
    def M(self) -> int:
        return self.w.shape[0]

    def copy(self) -> BeamformerState:
        return BeamformerState(self.w.copy(), self.p.copy())

    def check(self, caps=None, schedule=None):
        """Raise ``ValueError`` if any invariant is violated."""
        norms = np.sum(np.abs(self.w) ** 2, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise ValueError(f"beamformers are not unit norm: {norms}")
        if np.any(self.p < 0):
            raise ValueError("negative transmit power")
        if caps is not None and np.any(self.p > np.asarray(caps) * (1 + 1e-12)):
            raise ValueError("transmit power above cap")
        if schedule is not None and schedule.M != self.M:
            raise ValueError(f"{self.M} beamformers for {schedule.M} groups")


@dataclass(frozen=True)
class NormalizedChannels:
    """Noise-normalized channels ``f_k = h_k / sigma_u_tilde`` (rows)."""

    f: np.ndarray
    sigma2_tilde: float

    @classmethod
    def from_channels(cls, channels: ChannelSet, D_max) -> NormalizedChannels:
        s2 = scaled_noise(channels.sigma2_ul, D_max)
        if not s2 > 0:
            raise DegenerateError("uplink noise variance must be positive to normalize channels")
        return cls(f=channels.h / np.sqrt(s2), sigma2_tilde=s2)

    def gram(self, w) -> np.ndarray:
        """``g[i - 1, q] = |f_q^H w_i|^2`` for all groups ``i`` and devices ``q``."""
        return np.abs(np.atleast_2d(w).conj() @ self.f.T) ** 2


def _per_group_terms(gains, p, schedule):
    """Per-group interference power and coherent / incoherent signal sums.

    ``gains[i - 1, q] = |x_q^H w_i|^2`` for whichever channel scaling ``x``.
    """
    M = schedule.M
    interference = np.empty(M)
    coherent = np.empty(M)
    incoherent = np.empty(M)
    for i in range(1, M + 1):
        own = schedule.members(i)
        row = gains[i - 1]
        mask = np.ones(row.size, dtype=bool)
        mask[own] = False
        interference[i - 1] = np.dot(p[mask], row[mask])
        coherent[i - 1] = np.sum(np.sqrt(p[own] * row[own])) ** 2
        incoherent[i - 1] = np.dot(p[own], row[own])
    return interference, coherent, incoherent


def _check_denominators(den):
    if np.any(~(den > 0)):
        bad = [i + 1 for i in np.flatnonzero(~(den > 0))]
        raise DegenerateError(f"zero received signal power for group(s) {bad}")


def objective_p2(state: BeamformerState, channels: ChannelSet, schedule: Schedule, D_max) -> float:
    """Sum over groups of (interference + sigma_u_tilde^2) / (sum sqrt(p)|h^H w|)^2."""
    gains = np.abs(state.w.conj() @ channels.h.T) ** 2
    interference, coherent, _ = _per_group_terms(gains, state.p, schedule)
    _check_denominators(coherent)
    return float(np.sum((interference + scaled_noise(channels.sigma2_ul, D_max)) / coherent))


def objective_p3(state: BeamformerState, nch: NormalizedChannels, schedule: Schedule) -> float:
    """Sum of inverse group SINRs in noise-normalized units."""
    interference, _, incoherent = _per_group_terms(nch.gram(state.w), state.p, schedule)
    _check_denominators(incoherent)
    return float(np.sum((interference + 1.0) / incoherent))


def w_pencil(i, p, nch: NormalizedChannels, schedule: Schedule):
    """Interference-plus-noise matrix ``A`` and signal matrix ``B`` for group ``i``."""
    own = schedule.members(i)
    mask = np.ones(nch.f.shape[0], dtype=bool)
    mask[own] = False
    F = nch.f
    A = (F[mask].T * p[mask]) @ F[mask].conj() + np.eye(F.shape[1])
    B = (F[own].T * p[own]) @ F[own].conj()
    return A, B


def rayleigh_quotient(w, A, B) -> float:
    """``(w^H A w) / (w^H B w)``; infinite when the denominator vanishes."""
    num = np.real(np.vdot(w, A @ w))
    den = np.real(np.vdot(w, B @ w))
    return np.inf if den <= 0 else float(num / den)


def power_iteration(H, rng=None, tol=1e-10, max_iter=10_000):
    """Dominant eigenpair of a Hermitian PSD matrix by power iteration.

    Stops when the eigenvalue estimate changes by less than ``tol``
    relative; the start vector is drawn from ``rng`` (seed 0 if omitted).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n = H.shape[0]
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = np.real(np.vdot(v, H @ v))
    for _ in range(max_iter):
        x = H @ v
        nx = np.linalg.norm(x)
        if nx == 0:
            return 0.0, v
        v = x / nx
        new = np.real(np.vdot(v, H @ v))
        if abs(new - lam) <= tol * abs(new):
            lam = new
            break
        lam = new
    return float(lam), v


def dominant_eigvec(H, method="eigh", rng=None):
    """Unit-norm eigenvector for the largest eigenvalue of Hermitian ``H``."""
    if method == "power":
        return power_iteration(H, rng=rng)
    if method != "eigh":
        raise ValueError(f"unknown eigensolver {method!r}")
    H = 0.5 * (H + H.conj().T)
    vals, vecs = linalg.eigh(H, subset_by_index=[H.shape[0] - 1, H.shape[0] - 1])
    v = vecs[:, 0]
    return float(vals[0]), v / np.linalg.norm(v)


def update_w(i, p, nch: NormalizedChannels, schedule: Schedule, method="eigh") -> np.ndarray:
    """Minimize ``w^H A w / w^H B w`` over unit-norm ``w`` for group ``i``.

    ``B`` is rank-deficient whenever the group is smaller than N, so the
    pencil is whitened on the ``A`` side (``A = L L^H``, always positive
    definite) and the reciprocal quotient is maximized instead: the top
    eigenvector ``u`` of ``L^-1 B L^-H`` maps back to ``w = L^-H u``.
    """
    A, B = w_pencil(i, p, nch, schedule)
    if not np.any(np.abs(B) > 0):
        raise DegenerateError(f"group {i} has no transmitting device with a non-zero channel")
    L = linalg.cholesky(A, lower=True)
    Y = linalg.solve_triangular(L, B, lower=True)
    C = linalg.solve_triangular(L, Y.conj().T, lower=True)
    _, u = dominant_eigvec(C, method=method)
    w = linalg.solve_triangular(L, u, lower=True, trans="C")
    return w / np.linalg.norm(w)


def update_p_group(i, state: BeamformerState, nch: NormalizedChannels, schedule: Schedule,
                   caps, cascade=True) -> np.ndarray:
    """Optimal powers of group ``i`` with the other groups' powers held fixed.

    With ``x = g_ii^T p_i`` the group-``i``-dependent part of the objective
    is ``c / x + sum_k d_k p_k``. Device ``k`` stops helping once ``x``
    exceeds ``a_k = sqrt(c g_ik / d_k)``, so every device stays at its cap
    except the one with the smallest ``a_k``, which backs off until
    ``x = a_min``. If that backoff would go below zero, ``cascade`` carries
    the remaining backoff to the next-smallest ``a_k``; without it the
    single device is clamped to zero.

    Returns the power vector of group ``i`` ordered like ``schedule.members(i)``.
    """
    caps = np.asarray(caps, dtype=float)
    own = schedule.members(i)
    g = nch.gram(state.w)
    p = state.p
    M = schedule.M

    others = np.ones(p.size, dtype=bool)
    others[own] = False
    c = np.dot(g[i - 1, others], p[others]) + 1.0

    d = np.zeros(own.size)
    for j in range(1, M + 1):
        if j == i:
            continue
        mem = schedule.members(j)
        s_j = np.dot(g[j - 1, mem], p[mem])
        if not s_j > 0:
            raise DegenerateError(f"group {j} has zero received signal power")
        d += g[j - 1, own] / s_j

    g_own = g[i - 1, own]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(d > 0, np.sqrt(c * g_own / np.where(d > 0, d, 1.0)), np.inf)

    cap_own = caps[own]
    out = cap_own.copy()
    x = float(np.dot(g_own, cap_own))
    # stable sort keeps the lowest device index on ties
    for step, idx in enumerate(np.argsort(a, kind="stable")):
        if a[idx] >= x:
            break
        if g_own[idx] <= 0:
            out[idx] = 0.0
            continue
        p_new = cap_own[idx] - (x - a[idx]) / g_own[idx]
        if p_new >= 0:
            out[idx] = min(p_new, cap_own[idx])
            break
        log.info("group %d: closed-form power for device %d is negative (%.3g); %s",
                 i, own[idx], p_new, "cascading" if cascade else "clamping to zero")
        out[idx] = 0.0
        if not cascade:
            break
        x -= g_own[idx] * cap_own[idx]
    return out


@dataclass
class BCDResult:
    state: BeamformerState
    trace: list = field(default_factory=list)
    trace_p2: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1

    @property
    def objective(self) -> float:
        return self.trace[-1]


def initial_state(nch: NormalizedChannels, schedule: Schedule, caps) -> BeamformerState:
    """Full power and each group's own dominant channel direction."""
    caps = np.asarray(caps, dtype=float)
    w = np.empty((schedule.M, nch.f.shape[1]), dtype=complex)
    for i in range(1, schedule.M + 1):
        own = schedule.members(i)
        F = nch.f[own]
        _, w[i - 1] = dominant_eigvec(F.T @ F.conj())
    return BeamformerState(w=w, p=caps.copy())


def bcd_solve(channels: ChannelSet, schedule: Schedule, caps, D_max, init=None, tol=1e-6,
              max_iter=100, cascade=True) -> BCDResult:
    """Alternate all ``w_i`` updates then all group power updates until the
    relative objective decrease drops below ``tol``.

    ``trace[0]`` is the objective of the starting point; each later entry
    follows one full sweep.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    nch = NormalizedChannels.from_channels(channels, D_max)
    state = initial_state(nch, schedule, caps) if init is None else init.copy()
    result = BCDResult(state=state)
    result.trace.append(objective_p3(state, nch, schedule))
    result.trace_p2.append(objective_p2(state, channels, schedule, D_max))
    for _ in range(max_iter):
        for i in range(1, schedule.M + 1):
            state.w[i - 1] = update_w(i, state.p, nch, schedule)
        for i in range(1, schedule.M + 1):
            state.p[schedule.members(i)] = update_p_group(i, state, nch, schedule, caps,
                                                          cascade=cascade)
        prev = result.trace[-1]
        cur = objective_p3(state, nch, schedule)
        result.trace.append(cur)
        result.trace_p2.append(objective_p2(state, channels, schedule, D_max))
        if prev - cur < tol * abs(prev):
            result.converged = True
            break
    return result


def snr_max_beamformer(channels: ChannelSet, caps) -> BeamformerState:
    """Single-group baseline: full power, ``w`` maximizing ``sum_k p_k |h_k^H w|^2``."""
    caps = np.asarray(caps, dtype=float)
    h = channels.h
    _, w = dominant_eigvec((h.T * caps) @ h.conj())
    return BeamformerState(w=w[None, :], p=caps.copy())


def transmit_weights(state: BeamformerState, channels: ChannelSet, schedule: Schedule) -> np.ndarray:
    """Phase-aligning device weights ``a_k = sqrt(p_k) h_k^H w_i / |h_k^H w_i|``."""
    a = np.zeros(channels.K, dtype=complex)
    for i in range(1, schedule.M + 1):
        own = schedule.members(i)
        inner = channels.h[own].conj() @ state.w[i - 1]
        mag = np.abs(inner)
        if np.any(mag == 0):
            raise DegenerateError(f"device orthogonal to the beamformer of group {i}")
        a[own] = np.sqrt(state.p[own]) * inner / mag
    return a
