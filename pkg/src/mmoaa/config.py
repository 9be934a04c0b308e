"""Simulation configuration: a flat YAML mapping mirroring :class:`SimConfig`."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .channel import (BS_NOISE_FIGURE_DB, DEVICE_NOISE_FIGURE_DB, DEVICE_POWER_DBM,
                      DISTANCE_RANGE_KM, DL_BANDWIDTH_HZ, NOISE_PSD_DBM_HZ, SHADOW_STD_DB,
                      UL_BANDWIDTH_HZ, dbm_to_watts, noise_variance_watts)
from .errors import ConfigurationError

SCHEMES = ("multimodel", "ideal", "seqnmodel")


@dataclass
class SimConfig:
    scheme: str = "multimodel"
    K: int = 12
    M: int = 3
    N: int = 16
    T: int = 30
    J: int = 20
    batch_size: int = 50
    eta: float | list = 0.1

    dataset: str = "synthetic"
    n_classes: int = 4
    feature_dims: int | list = field(default_factory=lambda: [8, 10, 12])
    train_samples: int = 1200
    test_samples: int = 2000
    margin: float = 1.0
    mnist_dir: str | None = None
    model_kind: str = "logistic"
    hidden: int = 16
    l2: float = 1e-3

    device_power_dbm: float = DEVICE_POWER_DBM
    p_ul: float | None = None
    ul_bandwidth_hz: float = UL_BANDWIDTH_HZ
    dl_bandwidth_hz: float = DL_BANDWIDTH_HZ
    noise_psd_dbm_hz: float = NOISE_PSD_DBM_HZ
    bs_noise_figure_db: float = BS_NOISE_FIGURE_DB
    device_noise_figure_db: float = DEVICE_NOISE_FIGURE_DB
    sigma2_ul: float | None = None
    sigma2_dl: float | None = None
    d_min_km: float = DISTANCE_RANGE_KM[0]
    d_max_km: float = DISTANCE_RANGE_KM[1]
    distances_km: float | list | None = None
    shadow_std_db: float = SHADOW_STD_DB

    seed: int = 0
    realizations: int = 10
    bcd_tol: float = 1e-6
    bcd_max_iter: int = 100
    bcd_cascade: bool = True
    seqn_split: str = "strict"
    ideal_weights: str = "uniform"
    bound: bool = True
    record_timing: bool = False
    workers: int = 1
    out: str = "results.csv"

    def __post_init__(self):
        self.validate()

    # derived quantities ---------------------------------------------------

    @property
    def frames(self) -> int:
        return -(-self.T // self.M)

    def eta_at(self, frame) -> float:
        if isinstance(self.eta, list):
            return float(self.eta[min(frame, len(self.eta) - 1)])
        return float(self.eta)

    def model_feature_dims(self) -> list:
        """Feature dimension per model; a short list is repeated cyclically."""
        dims = [self.feature_dims] if isinstance(self.feature_dims, int) else list(self.feature_dims)
        return [dims[m % len(dims)] for m in range(self.M)]

    def uplink_noise(self) -> float:
        if self.sigma2_ul is not None:
            return float(self.sigma2_ul)
        return noise_variance_watts(self.noise_psd_dbm_hz, self.ul_bandwidth_hz,
                                    self.bs_noise_figure_db)

    def downlink_noise(self) -> float:
        if self.sigma2_dl is not None:
            return float(self.sigma2_dl)
        return noise_variance_watts(self.noise_psd_dbm_hz, self.dl_bandwidth_hz,
                                    self.device_noise_figure_db)

    def power_per_element(self) -> float:
        """``P^ul``: half the per-channel-use device power budget, in watts."""
        if self.p_ul is not None:
            return float(self.p_ul)
        return float(dbm_to_watts(self.device_power_dbm)) / 2.0

    def seqn_rounds(self) -> list:
        """Rounds given to each model by the sequential baseline."""
        base, extra = divmod(self.T, self.M)
        if extra and self.seqn_split == "strict":
            raise ConfigurationError(
                f"T={self.T} is not divisible by M={self.M}; set seqn_split: balanced")
        return [base + (1 if m < extra else 0) for m in range(self.M)]

    # validation -----------------------------------------------------------

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigurationError(msg)

        need(self.scheme in SCHEMES, f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        need(min(self.K, self.M, self.N, self.T, self.J, self.batch_size) >= 1,
             "K, M, N, T, J and batch_size must be positive")
        need(self.K % self.M == 0, f"K={self.K} is not divisible by M={self.M}")
        need(self.realizations >= 1, "realizations must be at least 1")
        need(self.bcd_tol > 0 and self.bcd_max_iter >= 1, "solver tolerances must be positive")
        etas = self.eta if isinstance(self.eta, list) else [self.eta]
        need(len(etas) > 0 and all(isinstance(e, (int, float)) and not isinstance(e, bool)
                                   for e in etas), "learning rates must be numbers")
        need(all(e >= 0 for e in etas), "learning rates must be non-negative")
        need(self.dataset in ("synthetic", "mnist"), f"unknown dataset {self.dataset!r}")
        need(self.dataset != "mnist" or self.mnist_dir, "dataset mnist needs mnist_dir")
        fd = [self.feature_dims] if isinstance(self.feature_dims, int) else self.feature_dims
        need(len(fd) > 0 and all(isinstance(d, int) and d >= 1 for d in fd),
             "feature_dims must be positive integers")
        need(self.model_kind in ("logistic", "mlp"), f"unknown model_kind {self.model_kind!r}")
        need(self.seqn_split in ("strict", "balanced"), "seqn_split must be strict or balanced")
        need(self.ideal_weights in ("uniform", "channel"), "ideal_weights must be uniform or channel")
        need(0 < self.d_min_km < self.d_max_km, "need 0 < d_min_km < d_max_km")
        need(self.train_samples >= self.K * self.batch_size,
             "train_samples must give every device at least one batch")
        need(self.workers >= 1, "workers must be at least 1")
        for name in ("sigma2_ul", "sigma2_dl", "p_ul"):
            v = getattr(self, name)
            need(v is None or v >= 0, f"{name} must be non-negative")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(SimConfig)}


def _type_ok(name, value) -> bool:
    declared = _FIELD_TYPES[name]
    allowed = []
    for part in declared.split("|"):
        part = part.strip()
        allowed.append({"int": (int,), "float": (int, float), "str": (str,), "bool": (bool,),
                        "list": (list,), "None": (type(None),)}[part])
    flat = tuple(t for group in allowed for t in group)
    if isinstance(value, bool) and bool not in flat:
        return False
    return isinstance(value, flat)


def config_from_dict(data: dict, **overrides) -> SimConfig:
    data = {**(data or {}), **{k: v for k, v in overrides.items() if v is not None}}
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
    for k, v in data.items():
        if not _type_ok(k, v):
            raise ConfigurationError(f"config key {k!r}: expected {_FIELD_TYPES[k]}, "
                                     f"got {type(v).__name__} {v!r}")
    return SimConfig(**data)


def load_config(path, **overrides) -> SimConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a flat key: value mapping")
    for k, v in (data or {}).items():
        if isinstance(v, dict):
            raise ConfigurationError(f"{path}: key {k!r} is nested; config must be flat")
    return config_from_dict(data or {}, **overrides)


def dump_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=False)
