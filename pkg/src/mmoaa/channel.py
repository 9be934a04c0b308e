"""Frame-static uplink channels and link-budget noise levels.

Path gain follows ``G[dB] = -136.3 - 35 log10(d_km) - psi`` with
log-normal shadowing ``psi``; each channel vector is ``sqrt(G) * hbar`` with
``hbar ~ CN(0, I)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PATH_GAIN_INTERCEPT_DB = -136.3
PATH_LOSS_EXPONENT_DB = 35.0

NOISE_PSD_DBM_HZ = -174.0
UL_BANDWIDTH_HZ = 1e6
DL_BANDWIDTH_HZ = 10e6
BS_NOISE_FIGURE_DB = 2.0
DEVICE_NOISE_FIGURE_DB = 8.0
DEVICE_POWER_DBM = 23.0
# Stored for completeness only; downlink precoding is not simulated.
BS_POWER_DBM = 47.0

DISTANCE_RANGE_KM = (0.02, 0.5)
SHADOW_STD_DB = 8.0


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def path_gain_db(d_km, psi_db=0.0):
    """Path gain in dB for distance ``d_km`` (km) and shadowing ``psi_db``."""
    d = np.asarray(d_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError(f"distance must be positive, got {d_km!r}")
    g = PATH_GAIN_INTERCEPT_DB - PATH_LOSS_EXPONENT_DB * np.log10(d) - np.asarray(psi_db, dtype=float)
    return float(g) if g.ndim == 0 else g


def noise_variance_dbm(psd_dbm_hz, bandwidth_hz, noise_figure_db):
    """Receiver noise power in dBm: PSD + 10 log10(B) + NF."""
    if bandwidth_hz <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth_hz!r}")
    return psd_dbm_hz + 10.0 * np.log10(bandwidth_hz) + noise_figure_db


def noise_variance_watts(psd_dbm_hz, bandwidth_hz, noise_figure_db):
    return float(dbm_to_watts(noise_variance_dbm(psd_dbm_hz, bandwidth_hz, noise_figure_db)))


DEFAULT_SIGMA2_UL = noise_variance_watts(NOISE_PSD_DBM_HZ, UL_BANDWIDTH_HZ, BS_NOISE_FIGURE_DB)
DEFAULT_SIGMA2_DL = noise_variance_watts(NOISE_PSD_DBM_HZ, DL_BANDWIDTH_HZ, DEVICE_NOISE_FIGURE_DB)


@dataclass(frozen=True)
class Geometry:
    """Per-device distances (km) and shadowing draws (dB)."""

    d: np.ndarray
    psi_db: np.ndarray
    shadow_std_db: float = SHADOW_STD_DB

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        psi = np.asarray(self.psi_db, dtype=float)
        if d.ndim != 1 or d.shape != psi.shape:
            raise ValueError("distances and shadowing must be 1-D arrays of equal length")
        if np.any(d <= 0):
            raise ValueError("distances must be positive")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "psi_db", psi)

    @property
    def K(self) -> int:
        return self.d.size

    def gains_db(self) -> np.ndarray:
        return np.atleast_1d(path_gain_db(self.d, self.psi_db))

    def gains(self) -> np.ndarray:
        return db_to_linear(self.gains_db())


def sample_geometry(K, rng_distance, rng_shadow, d_range=DISTANCE_RANGE_KM,
                    shadow_std_db=SHADOW_STD_DB, distances=None) -> Geometry:
    """Draw one realization's device placement and shadowing.

    Distances are uniform on ``d_range`` unless ``distances`` pins them.
    Shadowing is drawn once per device and held for the whole realization.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    lo, hi = d_range
    if not 0 < lo < hi:
        raise ValueError(f"invalid distance range {d_range!r}")
    if distances is None:
        d = rng_distance.uniform(lo, hi, size=K)
    else:
        d = np.broadcast_to(np.asarray(distances, dtype=float), (K,)).copy()
    psi = rng_shadow.normal(0.0, shadow_std_db, size=K) if shadow_std_db > 0 else np.zeros(K)
    return Geometry(d=d, psi_db=psi, shadow_std_db=shadow_std_db)


@dataclass(frozen=True)
class ChannelSet:
    """Channels ``h`` (K x N, row k is device k) for one frame plus noise levels."""

    frame_index: int
    h: np.ndarray
    sigma2_ul: float
    sigma2_dl: float

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if h.ndim != 2:
            raise ValueError("h must be a K x N array")
        if not np.all(np.isfinite(h)):
            raise ValueError("channel entries must be finite")
        if self.sigma2_ul < 0 or self.sigma2_dl < 0:
            raise ValueError("noise variances must be non-negative")
        object.__setattr__(self, "h", h)

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @property
    def N(self) -> int:
        return self.h.shape[1]


def complex_normal(rng, shape, variance=1.0):
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_channels(geometry: Geometry, N, frame, rng, sigma2_ul=DEFAULT_SIGMA2_UL,
                    sigma2_dl=DEFAULT_SIGMA2_DL) -> ChannelSet:
    """Draw ``h_k = sqrt(G_k) * hbar_k`` for every device for one frame.

    ``rng`` should be the frame's own substream so that the draw depends
    only on (seed, realization, frame).
    """
    if N < 1 or geometry.K < 1:
        raise ValueError("N and K must be at least 1")
    hbar = complex_normal(rng, (geometry.K, N))
    h = np.sqrt(geometry.gains())[:, None] * hbar
    return ChannelSet(frame_index=int(frame), h=h, sigma2_ul=float(sigma2_ul),
                      sigma2_dl=float(sigma2_dl))
