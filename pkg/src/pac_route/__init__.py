"""Risk-controlled routing between a thinking and a non-thinking model.

The library calibrates per-group uncertainty thresholds with statistical
upper confidence bounds so that the extra loss of routing easy inputs to the
cheap model stays below a tolerance with high probability, optionally learns
the groups by clustering the uncertainty scores, and verifies the guarantees
by Monte Carlo simulation against populations with known risk.
"""

__version__ = "0.1.0"

from .calibration import (
    CHEAP,
    GROUP_ALL,
    MODES,
    POLICY_VERSION,
    THINK,
    CalibrationReport,
    GroupThreshold,
    LabelAssigner,
    PolicyVersionError,
    RouteDecision,
    RoutingPolicy,
    TrivialAssigner,
    calibrate_gpac,
    calibrate_group,
    load_policy,
    route,
    save_policy,
)
from .clustering import (
    ClusterConfig,
    Partition,
    assign_group,
    calibrate_cpac,
    kmeans_1d,
    partition_gap,
)
from .estimator import (
    EstimatorConfig,
    UcbCurve,
    ZSamples,
    candidate_grid,
    draw_z_samples,
    hoeffding_delta,
    normal_quantile,
    ucb_clt,
    ucb_hoeffding,
)
from .evaluation import MetricsReport, error_gap, evaluate, stp, trial_error
from .io import load_records, write_records_jsonl
from .records import (
    LossSpec,
    Record,
    ResolvedRecord,
    binary_loss,
    cosine_loss,
    default_loss_spec,
    resolve_loss,
)
from .seeding import derive_seed, substream
from .simulation import (
    CoverageReport,
    GroupSpec,
    SyntheticSpec,
    binomial_slack,
    coverage_experiment,
    generate,
    load_spec,
    policy_true_metrics,
    sample_group,
    true_risk,
)

__all__ = [
    "__version__",
    "CHEAP", "THINK", "GROUP_ALL", "MODES", "POLICY_VERSION",
    "Record", "ResolvedRecord", "LossSpec", "default_loss_spec",
    "binary_loss", "cosine_loss", "resolve_loss",
    "EstimatorConfig", "ZSamples", "UcbCurve",
    "draw_z_samples", "candidate_grid", "ucb_clt", "ucb_hoeffding",
    "hoeffding_delta", "normal_quantile",
    "TrivialAssigner", "LabelAssigner", "GroupThreshold", "RoutingPolicy",
    "RouteDecision", "CalibrationReport", "PolicyVersionError",
    "calibrate_group", "calibrate_gpac", "route", "save_policy", "load_policy",
    "Partition", "ClusterConfig", "kmeans_1d", "assign_group",
    "partition_gap", "calibrate_cpac",
    "MetricsReport", "trial_error", "error_gap", "stp", "evaluate",
    "GroupSpec", "SyntheticSpec", "CoverageReport", "load_spec",
    "generate", "sample_group", "true_risk", "policy_true_metrics",
    "coverage_experiment", "binomial_slack",
    "load_records", "write_records_jsonl",
    "derive_seed", "substream",
]
