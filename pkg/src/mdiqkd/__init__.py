"""Four-intensity decoy-state MDI-QKD over asymmetric and unstable channels.

The pieces, bottom up: :mod:`~mdiqkd.sources` (photon-number distributions
and the twelve source parameters), :mod:`~mdiqkd.channel` (transmittances and
loss compensation), :mod:`~mdiqkd.bsm` (Fock-basis detection model) with its
Monte Carlo cross-check in :mod:`~mdiqkd.oracle`, :mod:`~mdiqkd.keyrate`
(decoy bounds and finite-size key rate), :mod:`~mdiqkd.model` (rate as a
function of the parameters) and :mod:`~mdiqkd.optimizer`.
"""

from .bsm import DetectorSpec, ObservedStats, fock_yields, observed_stats
from .channel import (
    CompensationPolicy,
    StableChannel,
    TransmittancePair,
    UnstableChannel,
    apply_compensation,
    distance_to_transmittance,
    pair_distribution,
)
from .keyrate import (
    FluctuationConfig,
    KeyRateReport,
    binary_entropy,
    e11ph_upper_bound,
    key_rate_asymptotic,
    key_rate_finite,
    s11_lower_bound,
)
from .model import DEFAULT_START, SimulationModel, optimize_model
from .optimizer import OptimizerConfig, fd_gradient, neighborhood_jump, optimize
from .sources import (
    PARAM_NAMES,
    ParamVector,
    PhotonDistribution,
    SourceSpec,
    build_wcs_source,
    check_decoy_conditions,
    ka_kb,
)

__version__ = "0.1.0"

__all__ = [
    "DetectorSpec", "ObservedStats", "fock_yields", "observed_stats",
    "CompensationPolicy", "StableChannel", "TransmittancePair", "UnstableChannel",
    "apply_compensation", "distance_to_transmittance", "pair_distribution",
    "FluctuationConfig", "KeyRateReport", "binary_entropy", "e11ph_upper_bound",
    "key_rate_asymptotic", "key_rate_finite", "s11_lower_bound",
    "DEFAULT_START", "SimulationModel", "optimize_model",
    "OptimizerConfig", "fd_gradient", "neighborhood_jump", "optimize",
    "PARAM_NAMES", "ParamVector", "PhotonDistribution", "SourceSpec",
    "build_wcs_source", "check_decoy_conditions", "ka_kb",
]
