"""Total-information-rate trade-off metrics for discrete-time control and
filtering systems, computed and cross-validated three ways: Riccati-recursion
rates, MMSE sandwich bounds from optimal estimators, and exact Gaussian
covariance-assembly oracles."""

__version__ = "0.1.0"

from . import errors
from .channel_sim import (
    ChannelSpec,
    LinearChannelStructure,
    MmseLedger,
    SandwichReport,
    constant_message_spec,
    estimate_mmse_ledger,
    linear_channel_joint,
    simulate_channel,
    verify_sandwich,
)
from .gaussian_info import (
    GaussianJoint,
    InfoValue,
    assemble_closed_loop_joint,
    conditional_mutual_information,
    differential_entropy,
    entropy_difference_check,
    mutual_information_blocks,
)
from .lti_rates import (
    DareSolution,
    LtiSystemSpec,
    ModalSplit,
    capacity_with_power_limits,
    footnote_identity_checks,
    lti_rate_report,
    modal_decompose,
    solve_dare_antistable,
    unstable_spectrum_rate,
)
from .ltv_rates import (
    DichotomySplit,
    LtvSystemSpec,
    MatrixSequence,
    dichotomy_split,
    ltv_rate_report,
    rde_antistable_trajectory,
    transition_logdet_rate,
    vanishing_noise_structure,
)
from .nonlinear_rates import (
    NonlinearPlantSpec,
    ParticleEnsemble,
    bayes_measurement_update,
    bayes_time_update,
    decouple_feedback_noise,
    entropy_difference_rate_estimate,
    nonlinear_rate_report,
    normal_correlation_mmse,
)
from .reports import RateReport

__all__ = [
    "ChannelSpec", "LinearChannelStructure", "MmseLedger", "SandwichReport",
    "constant_message_spec", "estimate_mmse_ledger", "linear_channel_joint",
    "simulate_channel", "verify_sandwich",
    "GaussianJoint", "InfoValue", "assemble_closed_loop_joint",
    "conditional_mutual_information", "differential_entropy",
    "entropy_difference_check", "mutual_information_blocks",
    "DareSolution", "LtiSystemSpec", "ModalSplit", "capacity_with_power_limits",
    "footnote_identity_checks", "lti_rate_report", "modal_decompose",
    "solve_dare_antistable", "unstable_spectrum_rate",
    "DichotomySplit", "LtvSystemSpec", "MatrixSequence", "dichotomy_split",
    "ltv_rate_report", "rde_antistable_trajectory", "transition_logdet_rate",
    "vanishing_noise_structure",
    "NonlinearPlantSpec", "ParticleEnsemble", "bayes_measurement_update",
    "bayes_time_update", "decouple_feedback_noise",
    "entropy_difference_rate_estimate", "nonlinear_rate_report",
    "normal_correlation_mmse",
    "RateReport",
    "errors",
]
