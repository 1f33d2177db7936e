"""Adaptive importance sampling: policies, estimators, updates and benchmarks."""

from .ais import (
    AisState,
    AisTrace,
    AllocationPolicy,
    StageRecord,
    StageWeights,
    compute_stage_weights,
    estimate_normalized,
    estimate_unnormalized,
    estimate_weighted,
    run_ais,
    run_ais_sample_scale,
    step_sample,
)
from .densities import Family, PolicyParams, TargetSpec, covariance_of, log_pdf, sample
from .policy_update import (
    GmmUpdater,
    IdentityUpdater,
    KlUpdater,
    MomentUpdater,
    RegMode,
    RegularizationMode,
    RiskAccumulator,
    VarianceRiskUpdater,
    accumulate,
    regularize_covariance,
)

__version__ = "0.1.0"
