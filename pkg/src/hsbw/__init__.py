"""Approximate balancing weights for noisy, state-clustered region data."""

from .balancing import (
    AugmentationSpec,
    EstimatorConfig,
    ToleranceSpec,
    assemble_problem,
    balance_table,
    fit,
    ridge_augment,
    solve_weights,
    state_weight_summary,
)
from .calibration import (
    CalibratedCovariates,
    NoiseCovarianceSet,
    between_state_covariance,
    calibrate,
    calibrate_correlated,
    calibrate_heterogeneous,
    calibrate_homogeneous,
    replicate_noise_covariance,
    signal_covariance,
)
from .errors import (
    AugmentationInfeasibleError,
    DomainError,
    FoldFailureError,
    HSBWError,
    InfeasibleError,
    IntegrityError,
    NumericalError,
    ParseError,
    RankDeficiencyError,
    SchemaError,
)
from .inference import (
    EffectEstimate,
    JackknifeTrace,
    confidence_interval,
    control_mean_variance,
    estimate_effect,
    jackknife_variance,
    oaxaca_blinder_weights,
    placebo_validation,
    point_estimate,
)
from .panel import RegionPanel
from .qp import (
    BalanceProblem,
    BlockCorrelation,
    WeightSolution,
    build_equicorrelated_omega,
    closed_form_dispersion,
    kkt_residuals,
    least_norm_gls_weights,
    solve_balance_qp,
)
from .simulation import SimConfig, run_study, theoretical_attenuation_bias

__version__ = "0.1.0"

__all__ = [
    "AugmentationInfeasibleError",
    "AugmentationSpec",
    "BalanceProblem",
    "BlockCorrelation",
    "CalibratedCovariates",
    "DomainError",
    "EffectEstimate",
    "EstimatorConfig",
    "FoldFailureError",
    "HSBWError",
    "InfeasibleError",
    "IntegrityError",
    "JackknifeTrace",
    "NoiseCovarianceSet",
    "NumericalError",
    "ParseError",
    "RankDeficiencyError",
    "RegionPanel",
    "SchemaError",
    "SimConfig",
    "ToleranceSpec",
    "WeightSolution",
    "assemble_problem",
    "balance_table",
    "between_state_covariance",
    "build_equicorrelated_omega",
    "calibrate",
    "calibrate_correlated",
    "calibrate_heterogeneous",
    "calibrate_homogeneous",
    "closed_form_dispersion",
    "confidence_interval",
    "control_mean_variance",
    "estimate_effect",
    "fit",
    "jackknife_variance",
    "kkt_residuals",
    "least_norm_gls_weights",
    "oaxaca_blinder_weights",
    "placebo_validation",
    "point_estimate",
    "replicate_noise_covariance",
    "ridge_augment",
    "run_study",
    "signal_covariance",
    "solve_balance_qp",
    "solve_weights",
    "state_weight_summary",
    "theoretical_attenuation_bias",
]
