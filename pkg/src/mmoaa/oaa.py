"""Model transport: complex packing, noisy downlink, over-the-air uplink.

A real model of length D travels as ``ceil(D/2)`` complex symbols whose
real parts are the first half of the parameters and imaginary parts the
second half. Every device sends its normalized packed model inside a
shared frame of ``ceil(D_max/2)`` channel uses; shorter models sit at a
per-group random offset and are zero-padded elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .beamform import BeamformerState, transmit_weights
from .channel import ChannelSet, complex_normal
from .errors import DegenerateError
from .scheduler import Schedule


def complex_length(D) -> int:
    """Channel uses needed for a D-parameter model (odd D carries one pad)."""
    return (int(D) + 1) // 2


@dataclass(frozen=True)
class PackedModel:
    values: np.ndarray
    source_dim: int
    placement_offset: int = 0

    def unpack(self) -> np.ndarray:
        return unpack_complex(self.values, self.source_dim)


def pack_complex(theta, offset=0) -> PackedModel:
    """``values[l] = theta[l] + 1j * theta[D/2 + l]``; ``len(theta)`` must be even."""
    theta = np.asarray(theta, dtype=float)
    D = theta.size
    if D % 2:
        raise ValueError(f"cannot pack odd-length vector (D={D}); pad it first")
    half = D // 2
    return PackedModel(values=theta[:half] + 1j * theta[half:], source_dim=D,
                       placement_offset=int(offset))


def pack_padded(theta, offset=0) -> PackedModel:
    """Like :func:`pack_complex` but appends one zero to odd-length input."""
    theta = np.asarray(theta, dtype=float)
    if theta.size % 2:
        packed = pack_complex(np.append(theta, 0.0), offset)
        return PackedModel(packed.values, theta.size, packed.placement_offset)
    return pack_complex(theta, offset)


def unpack_complex(values, source_dim) -> np.ndarray:
    """Inverse of packing: ``[Re(values), Im(values)]`` truncated to ``source_dim``."""
    values = np.asarray(values)
    return np.concatenate([values.real, values.imag])[:source_dim].astype(float)


def _complex_view(theta) -> np.ndarray:
    return pack_padded(theta).values


def downlink_broadcast(theta, sigma2_dl, rng, n_devices=1) -> np.ndarray:
    """Each of ``n_devices`` receives ``theta + N(0, sigma2_dl I)`` independently."""
    if sigma2_dl < 0:
        raise ValueError("downlink noise variance must be non-negative")
    theta = np.asarray(theta, dtype=float)
    noise = rng.standard_normal((n_devices, theta.size)) * np.sqrt(sigma2_dl)
    return theta[None, :] + noise


def place_models(schedule: Schedule, dims, D_max, t, rng) -> np.ndarray:
    """One offset per group for round ``t``, uniform over the free slots.

    ``dims[m - 1]`` is the parameter count of model ``m``. Every device in
    a group shares the group's offset.
    """
    L = complex_length(D_max)
    offsets = np.zeros(schedule.M, dtype=int)
    for i in range(1, schedule.M + 1):
        slack = L - complex_length(dims[schedule.model_of(i, t) - 1])
        if slack < 0:
            raise ValueError(f"model dimension exceeds D_max={D_max}")
        offsets[i - 1] = rng.integers(0, slack + 1)
    return offsets


@dataclass
class AggregationResult:
    """New global models keyed by model number, plus per-group diagnostics.

    ``weights[i - 1]`` is aligned with ``schedule.members(i)``.
    """

    global_models: dict
    weights: list
    signal_power: np.ndarray
    interference_power: np.ndarray
    noise_power: np.ndarray
    terms: dict = field(default_factory=dict)


def aggregation_weights(locals_, state: BeamformerState, channels: ChannelSet,
                        schedule: Schedule):
    """Effective-gain sums and weights ``rho`` per group.

    Device ``k`` in group ``i`` has effective gain
    ``alpha_k = sqrt(p_k) |h_k^H w_i| / ||packed local model||``; the
    group's weights are ``alpha / sum(alpha)``.
    """
    inner = np.abs(state.w.conj() @ channels.h.T)
    totals = np.zeros(schedule.M)
    weights = []
    for i in range(1, schedule.M + 1):
        own = schedule.members(i)
        norms = np.array([np.linalg.norm(_complex_view(locals_[k])) for k in own])
        if np.any(norms == 0):
            raise DegenerateError(f"zero local model in group {i}; cannot normalize")
        alpha = np.sqrt(state.p[own]) * inner[i - 1, own] / norms
        total = alpha.sum()
        if not total > 0:
            raise DegenerateError(f"group {i} has zero total effective gain")
        totals[i - 1] = total
        weights.append(alpha / total)
    return totals, weights


def uplink_aggregate(locals_, state: BeamformerState, channels: ChannelSet, schedule: Schedule,
                     t, dims, offsets, rng, sigma2_ul=None, audit=False, previous=None,
                     starts=None) -> AggregationResult:
    """Simulate one round of over-the-air aggregation for all groups at once.

    ``locals_[k]`` is device k's trained real model. The antenna-level
    received block ``V`` (N x L channel uses) is formed from every device's
    phase-aligned transmission plus ``CN(0, sigma2_ul)`` noise; group i's
    estimate is ``(w_i^H V)`` over its window divided by the sum of its
    effective gains.

    With ``audit=True`` the result's ``terms`` also carries the per-group
    split into weighted local average, interference and noise, the antenna
    noise block ``U``, a literal per-channel-use recomputation of the
    received signal, and (when
    ``previous`` global models and downlink-received ``starts`` are given)
    the split of the weighted average into previous model, local progress
    and downlink noise.
    """
    sigma2 = channels.sigma2_ul if sigma2_ul is None else sigma2_ul
    M, K, N = schedule.M, channels.K, channels.N
    L = complex_length(max(dims))
    model_of = [schedule.model_of(i, t) for i in range(1, M + 1)]
    lengths = [complex_length(dims[m - 1]) for m in model_of]
    offsets = np.asarray(offsets, dtype=int)

    packed = [None] * K
    norms = np.zeros(K)
    X = np.zeros((K, L), dtype=complex)
    for i in range(1, M + 1):
        o, n = offsets[i - 1], lengths[i - 1]
        for k in schedule.members(i):
            v = _complex_view(locals_[k])
            if v.size != n:
                raise ValueError(f"device {k} sent {v.size} symbols, model needs {n}")
            nu = np.linalg.norm(v)
            if nu == 0:
                raise DegenerateError(f"device {k} has a zero local model; cannot normalize")
            packed[k], norms[k] = v, nu
            X[k, o:o + n] = v / nu

    a = transmit_weights(state, channels, schedule)
    h = channels.h
    U = complex_normal(rng, (N, L), sigma2)
    V = h.T @ (a[:, None] * X) + U
    Y = state.w.conj() @ V

    inner = state.w.conj() @ h.T  # inner[i - 1, q] = w_i^H h_q
    group_of = schedule.group_index()

    totals, weights = aggregation_weights(locals_, state, channels, schedule)
    global_models = {}
    sig_p = np.zeros(M)
    int_p = np.zeros(M)
    noise_p = np.zeros(M)
    terms = {"signal": {}, "interference": {}, "noise": {}, "end_to_end": {}} if audit else {}
    for i in range(1, M + 1):
        own = schedule.members(i)
        o, n = offsets[i - 1], lengths[i - 1]
        m = model_of[i - 1]
        rho, total = weights[i - 1], totals[i - 1]

        est = Y[i - 1, o:o + n] / total
        global_models[m] = unpack_complex(est, dims[m - 1])

        signal = sum(r * packed[k] for r, k in zip(rho, own))
        interference = np.zeros(n, dtype=complex)
        for q in np.flatnonzero(group_of != i):
            j = group_of[q]
            own_inner = inner[j - 1, q].conj()  # h_q^H w_j
            coef = own_inner * inner[i - 1, q] / abs(own_inner) * np.sqrt(state.p[q])
            interference += coef * X[q, o:o + n]
        interference /= total
        noise = (state.w[i - 1].conj() @ U[:, o:o + n]) / total
        sig_p[i - 1] = np.vdot(signal, signal).real
        int_p[i - 1] = np.vdot(interference, interference).real
        noise_p[i - 1] = np.vdot(noise, noise).real
        if audit:
            terms["signal"][m] = signal
            terms["interference"][m] = interference
            terms["noise"][m] = noise
            terms["end_to_end"][m] = est

    if audit:
        terms["channel_noise"] = U
        terms["per_channel_use"] = _literal_receive(h, a, X, U, state.w, offsets, lengths,
                                                    totals, model_of)
        if previous is not None and starts is not None:
            terms["update"] = _update_terms(schedule, model_of, weights, packed, previous, starts)
    return AggregationResult(global_models, weights, sig_p, int_p, noise_p, terms)


def _literal_receive(h, a, X, U, W, offsets, lengths, alpha_sums, model_of):
    """Recompute each group's estimate one channel use at a time."""
    K, L = X.shape
    out = {}
    z = np.zeros((W.shape[0], L), dtype=complex)
    for l in range(L):
        v = U[:, l].copy()
        for k in range(K):
            v += h[k] * a[k] * X[k, l]
        for i in range(W.shape[0]):
            z[i, l] = np.vdot(W[i], v)
    for i, m in enumerate(model_of):
        o, n = offsets[i], lengths[i]
        out[m] = z[i, o:o + n] / alpha_sums[i]
    return out


def _update_terms(schedule, model_of, weights, packed, previous, starts):
    """Split ``sum_k rho_k theta_k`` into previous model, progress and downlink noise."""
    out = {}
    for i, m in enumerate(model_of, start=1):
        prev = _complex_view(previous[m])
        progress = np.zeros_like(prev)
        dl_noise = np.zeros_like(prev)
        for r, k in zip(weights[i - 1], schedule.members(i)):
            start = _complex_view(starts[k])
            progress += r * (packed[k] - start)
            dl_noise += r * (start - prev)
        out[m] = {"previous": prev, "progress": progress, "downlink_noise": dl_noise}
    return out


def ideal_aggregate(locals_, schedule: Schedule, t, dims, weights=None) -> AggregationResult:
    """Error-free aggregation: per-group weighted average of the exact local models.

    ``weights[i - 1]`` (aligned with the group's members) defaults to uniform.
    """
    M = schedule.M
    global_models = {}
    used = []
    for i in range(1, M + 1):
        own = schedule.members(i)
        m = schedule.model_of(i, t)
        rho = np.full(own.size, 1.0 / own.size) if weights is None else np.asarray(weights[i - 1], float)
        stacked = np.stack([np.asarray(locals_[k], dtype=float) for k in own])
        global_models[m] = rho @ stacked
        used.append(rho)
    zeros = np.zeros(M)
    sig = np.array([np.sum(global_models[schedule.model_of(i, t)] ** 2) for i in range(1, M + 1)])
    return AggregationResult(global_models, used, sig, zeros, zeros.copy())
