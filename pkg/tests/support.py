"""Random instance builders and loop-level reference transcriptions.

The reference functions here deliberately avoid the package's vectorized
helpers: every sum is an explicit Python loop over groups and devices.
"""

import numpy as np

from mmoaa.beamform import BeamformerState
from mmoaa.channel import ChannelSet
from mmoaa.scheduler import Schedule

ACCEPTANCE = []


def verdict(number, title, ok, detail="", status=None):
    """Print and keep one PASS/FAIL (or SKIP) line for an acceptance criterion."""
    status = status or ("PASS" if ok else "FAIL")
    line = f"[{status}] criterion {number:>3} {title}" + (f": {detail}" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    return ok


def random_channels(rng, K, N, sigma2_ul=0.1, sigma2_dl=0.01, spread_db=0.0):
    """Unit-variance Rayleigh channels, optionally with per-device gain spread."""
    h = (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / np.sqrt(2)
    if spread_db:
        h *= np.sqrt(10 ** (rng.uniform(-spread_db, spread_db, K) / 10))[:, None]
    return ChannelSet(frame_index=0, h=h, sigma2_ul=sigma2_ul, sigma2_dl=sigma2_dl)


def random_schedule(rng, K, M):
    perm = rng.permutation(K)
    size = K // M
    return Schedule(0, tuple(np.sort(perm[i * size:(i + 1) * size]) for i in range(M)))


def random_state(rng, M, N, caps):
    w = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    p = rng.uniform(0.1, 1.0, len(caps)) * caps
    return BeamformerState(w=w, p=p)


def random_instance(seed, K=None, M=None, N=None, spread_db=10.0):
    rng = np.random.default_rng(seed)
    M = M or int(rng.integers(1, 4))
    K = K or M * int(rng.integers(1, 4))
    N = N or int(rng.integers(2, 7))
    ch = random_channels(rng, K, N, sigma2_ul=10 ** rng.uniform(-2, 0), spread_db=spread_db)
    sch = random_schedule(rng, K, M)
    caps = rng.uniform(0.5, 2.0, K)
    return rng, ch, sch, caps


# reference objectives ------------------------------------------------------

def ref_objective_p3(w, p, h, groups, sigma2_tilde):
    """Sum over groups of (interference + 1) / signal with f = h / sigma_tilde."""
    f = h / np.sqrt(sigma2_tilde)
    total = 0.0
    for i, own in enumerate(groups):
        num = 1.0
        den = 0.0
        for q in range(h.shape[0]):
            g = abs(np.vdot(f[q], w[i])) ** 2
            if q in own:
                den += p[q] * g
            else:
                num += p[q] * g
        total += num / den
    return total


def ref_objective_p2(w, p, h, groups, sigma2_tilde):
    """Sum over groups of (interference + sigma_tilde^2) / (sum sqrt(p)|h^H w|)^2."""
    total = 0.0
    for i, own in enumerate(groups):
        num = sigma2_tilde
        amp = 0.0
        for q in range(h.shape[0]):
            g = abs(np.vdot(h[q], w[i]))
            if q in own:
                amp += np.sqrt(p[q]) * g
            else:
                num += p[q] * g ** 2
        total += num / amp ** 2
    return total


# reference aggregation -----------------------------------------------------

def ref_pack(theta):
    theta = list(theta)
    if len(theta) % 2:
        theta.append(0.0)
    half = len(theta) // 2
    return np.array([complex(theta[l], theta[half + l]) for l in range(half)])


def ref_group_estimate(i, locals_, w, p, h, groups, model_len, offsets, L, noise=None):
    """Group ``i``'s received estimate written out term by term.

    Signal: sum of rho_k packed theta_k. Interference: for every device q
    outside the group, sqrt(p_q) (w_i^H h_q)(h_q^H w_j)/|h_q^H w_j| times
    q's normalized, placed symbols read through group i's window, all over
    the group's effective-gain sum. Noise: w_i^H U over the window divided
    by the same sum.
    """
    def group_of(q):
        for j, own in enumerate(groups):
            if q in own:
                return j
        raise KeyError(q)

    def placed(q):
        v = ref_pack(locals_[q])
        x = np.zeros(L, dtype=complex)
        j = group_of(q)
        x[offsets[j]:offsets[j] + len(v)] = v / np.linalg.norm(v)
        return x

    own = groups[i]
    alphas = []
    for k in own:
        v = ref_pack(locals_[k])
        alphas.append(np.sqrt(p[k]) * abs(np.vdot(h[k], w[i])) / np.linalg.norm(v))
    total = sum(alphas)
    n = model_len[i]
    o = offsets[i]
    signal = np.zeros(n, dtype=complex)
    for a_k, k in zip(alphas, own):
        signal += (a_k / total) * ref_pack(locals_[k])
    interference = np.zeros(n, dtype=complex)
    for q in range(h.shape[0]):
        if q in own:
            continue
        j = group_of(q)
        hq_wj = np.vdot(h[q], w[j])
        wi_hq = np.vdot(w[i], h[q])
        coef = np.sqrt(p[q]) * wi_hq * hq_wj / abs(hq_wj)
        interference += coef * placed(q)[o:o + n] / total
    out = signal + interference
    if noise is not None:
        out = out + np.array([np.vdot(w[i], noise[:, o + l]) for l in range(n)]) / total
    return out, signal, interference


# reference bound ------------------------------------------------------------

def ref_error_bound(w, p, h, groups, r, M, K, su2, sd2):
    s = 0.0
    for i, own in enumerate(groups):
        interf = 0.0
        amp = 0.0
        for q in range(h.shape[0]):
            g = abs(np.vdot(h[q], w[i]))
            if q in own:
                amp += np.sqrt(p[q]) * g
            else:
                interf += p[q] * g ** 2
        s += (interf + su2) / amp ** 2
    return r * M * K * s + 2 * K * sd2


def ref_gap(Gamma, etas, lam, J, M, K, phi, delta, sd2, H):
    S = len(etas)
    G = [4 * (1 - etas[n] * lam) ** (2 * J * M) for n in range(S)]
    C = [4 * etas[n] ** 2 * J ** 2 * (M ** 2 * phi + K ** 2 * delta) + 8 * K * sd2
         for n in range(S)]
    prod_all = 1.0
    for g in G:
        prod_all *= g
    total = Gamma * prod_all
    for n in range(S):
        tail = 1.0
        for s in range(n + 1, S):
            tail *= G[s]
        total += (C[n] + H[n]) * tail
    return total


# reference power search ------------------------------------------------------

def ref_power_grid_min(i, w, p, h, groups, sigma2_tilde, caps, n=10_000, chunk=250):
    """Exhaustive grid over group ``i``'s own powers (one or two devices).

    Every other power stays at ``p``. Returns the smallest full objective
    found and the powers that attain it.
    """
    f = h / np.sqrt(sigma2_tilde)
    K = h.shape[0]
    g = np.array([[abs(np.vdot(f[q], w[j])) ** 2 for q in range(K)] for j in range(len(groups))])
    own = list(groups[i - 1])
    if len(own) not in (1, 2):
        raise ValueError("grid oracle handles one or two devices per group")
    axes = [np.linspace(0.0, caps[k], n) for k in own]

    def total(P):
        out = 0.0
        for j, mem in enumerate(groups):
            mem = list(mem)
            num = 1.0 + sum(g[j, q] * p[q] for q in range(K) if q not in mem and q not in own)
            den = sum(g[j, k] * p[k] for k in mem if k not in own)
            for Pk, k in zip(P, own):
                if k in mem:
                    den = den + g[j, k] * Pk
                else:
                    num = num + g[j, k] * Pk
            with np.errstate(divide="ignore", invalid="ignore"):
                out = out + num / den
        return np.where(np.isfinite(out), out, np.inf)

    best, arg = np.inf, None
    if len(own) == 1:
        vals = total([axes[0]])
        k = int(np.argmin(vals))
        return float(vals[k]), np.array([axes[0][k]])
    for start in range(0, n, chunk):
        P0 = axes[0][start:start + chunk, None]
        vals = total([P0, axes[1][None, :]])
        k = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[k] < best:
            best, arg = float(vals[k]), np.array([P0[k[0], 0], axes[1][k[1]]])
    return best, arg
