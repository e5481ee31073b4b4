"""Weighted-substream SINR balancing for K-user MIMO interference channels."""

from .errors import (
    ConfigurationError,
    DegenerateStreamError,
    IcbalanceError,
    InfeasibleTargetsError,
)
from .model import (
    BeamformerSet,
    ChannelSet,
    NetworkConfig,
    PowerAllocation,
    flatten_index,
    generate_channels,
    split_flat,
    unflatten_index,
)
from .beamforming import (
    CovarianceBundle,
    covariances,
    max_sinr_alternate,
    max_sinr_trace,
    mmse_receive_filter,
    random_unit_beamformers,
    sinr,
    sinr_all,
)
from .balancer import (
    BalanceResult,
    TargetState,
    balance,
    delta,
    fairness_gap,
    inner_power_step,
    interference_function,
    linear_search,
    run_inner_loop,
    update_targets,
)
from .contraction import (
    ContractionCertificate,
    LinearInterferenceMap,
    build_map,
    certify,
    certify_map,
    convergence_rate_check,
    fixed_point_direct,
    spectral_radius,
    weighted_max_norm,
)
from .metrics import (
    LinkRealization,
    MetricReport,
    draw_link_realization,
    measured_sinr,
    qpsk_demap,
    qpsk_map,
    simulate_ber,
    sum_rate,
)
from .experiments import ExperimentSpec, spec_from_dict, spec_from_yaml

__version__ = "0.1.0"

__all__ = [
    "BalanceResult", "BeamformerSet", "ChannelSet", "ConfigurationError",
    "ContractionCertificate", "CovarianceBundle", "DegenerateStreamError",
    "ExperimentSpec", "IcbalanceError", "InfeasibleTargetsError",
    "LinearInterferenceMap", "LinkRealization", "MetricReport",
    "NetworkConfig", "PowerAllocation", "TargetState", "balance", "build_map",
    "certify", "certify_map", "convergence_rate_check", "covariances", "delta",
    "draw_link_realization", "fairness_gap", "fixed_point_direct",
    "flatten_index", "generate_channels", "inner_power_step",
    "interference_function", "linear_search", "max_sinr_alternate",
    "max_sinr_trace", "measured_sinr", "mmse_receive_filter", "qpsk_demap",
    "qpsk_map", "random_unit_beamformers", "run_inner_loop", "simulate_ber",
    "sinr", "sinr_all", "spec_from_dict", "spec_from_yaml", "split_flat",
    "sum_rate", "unflatten_index", "update_targets", "weighted_max_norm",
]
