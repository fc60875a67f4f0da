"""Locally differentially private sparse linear regression.

Library layers: linalg primitives, data generators, user-side privacy
mechanisms, a protocol simulator enforcing the interaction discipline,
estimators, and a Monte-Carlo benchmark harness with a CLI.
"""

from .bench import ExperimentConfig, RateFit, ResultRow, fit_rate, run_experiment
from .datagen import (
    Dataset,
    GroundTruth,
    HardInstance,
    NoiseSpec,
    make_ground_truth,
    sample_hard_interactive,
    sample_hard_noninteractive,
    sample_heavy_tailed,
    sample_subgaussian,
)
from .estimators import (
    EstimateReport,
    IhtConfig,
    NldpConfig,
    evaluate,
    ldp_iht,
    nldp_estimate,
    nldp_public_estimate,
    ols_soft_threshold,
)
from .linalg import (
    CovarianceNotInvertible,
    SpectrumReport,
    hard_truncate,
    project_l2_ball,
    soft_threshold,
    solve_spd,
    spectrum,
)
from .mechanisms import (
    ClipConfig,
    PerturbedMessage,
    PrivacyBudget,
    clip_l2,
    clip_response,
    perturb_stats,
    shrink_coordinates,
    sphere_calibration,
    sphere_randomizer,
)
from .protocol import (
    AuditReport,
    Transcript,
    UserView,
    audit_transcript,
    run_non_interactive,
    run_sequential,
)

__version__ = "0.1.0"
