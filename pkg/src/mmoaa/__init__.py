"""Multi-model federated learning with uplink over-the-air aggregation."""

from .beamform import (BCDResult, BeamformerState, NormalizedChannels, bcd_solve, objective_p2,
                       objective_p3, snr_max_beamformer, update_p_group, update_w)
from .bound import BoundConstants, error_bound, gap_bound, h_term
from .channel import ChannelSet, Geometry, noise_variance_dbm, path_gain_db, sample_channels
from .config import SimConfig, load_config
from .errors import ConfigurationError, DegenerateError, IDXFormatError, MMOAAError
from .oaa import (PackedModel, downlink_broadcast, ideal_aggregate, pack_complex, place_models,
                  uplink_aggregate)
from .scheduler import Schedule, assigned_model, group_training_model, partition_devices

__version__ = "0.1.0"

__all__ = [
    "BCDResult", "BeamformerState", "BoundConstants", "ChannelSet", "ConfigurationError",
    "DegenerateError", "Geometry", "IDXFormatError", "MMOAAError", "NormalizedChannels",
    "PackedModel", "Schedule", "SimConfig", "assigned_model", "bcd_solve", "downlink_broadcast",
    "error_bound", "gap_bound", "group_training_model", "h_term", "ideal_aggregate",
    "load_config", "noise_variance_dbm", "objective_p2", "objective_p3", "pack_complex",
    "partition_devices", "path_gain_db", "place_models", "sample_channels", "snr_max_beamformer",
    "update_p_group", "update_w", "uplink_aggregate",
]
