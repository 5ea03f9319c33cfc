"""dyadscope: streaming anomaly detection for directed dyadic activity.

A dynamic bilinear mixed-effects logistic model — baseline + sender effect +
receiver effect + latent inner product — fitted online per time bucket with
approximate message passing, with forgetting-factor dynamics, case-control
non-edge subsampling, and edge/subgraph anomaly scoring on top.

Typical entry points: :func:`replay` for the full online loop over bucketized
snapshots, :func:`fit_period` / :func:`score_edges` for single steps, and the
``dyadscope`` console script for file-to-file runs.
"""

from .checkpoint import (
    Checkpoint,
    CheckpointCorruptError,
    CheckpointError,
    CheckpointVersionError,
    checkpoint_load,
    checkpoint_save,
)
from .dynamics import TauAssignment, TuningError, inflate_priors, tune_forgetting
from .engine import (
    NonCaseSample,
    SamplingError,
    SweepStats,
    fit_period,
    sample_noncases,
)
from .gaussians import (
    Gaussian1D,
    GaussianD,
    GaussianError,
    ImproperGaussianError,
    Mixture2,
    NotPositiveDefiniteError,
    divide,
    expit_gauss,
    mgf_bilinear,
    mgf_scalar,
    multiply,
    project_mixture,
)
from .ingest import (
    EventRecord,
    IngestError,
    IngestStats,
    NodeTable,
    PeriodicityTable,
    PeriodSnapshot,
    bucketize,
    build_node_table,
    ingest,
    periodicity_shifts,
)
from .metrics import MetricError, auc_roc, logit_corr, roc_curve
from .model import (
    ConfigError,
    ModelConfig,
    ParamState,
    SamplingPolicy,
    StateMoments,
    init_priors,
    jitter_latent_means,
    rebase_mu_for_log_q,
)
from .pipeline import (
    PeriodMetrics,
    ReplayResult,
    RunConfig,
    derive_seed,
    replay,
    snapshots_from_arrays,
)
from .scoring import (
    EdgeScore,
    ScoringError,
    SubgraphAlarm,
    enumerate_subgraphs,
    rank_alarms,
    scan_stat_baseline,
    score_edges,
)
from .simulate import BilinearSimConfig, DcsbmConfig, gen_bilinear, gen_dcsbm

__version__ = "0.1.0"

__all__ = [
    "BilinearSimConfig",
    "Checkpoint",
    "CheckpointCorruptError",
    "CheckpointError",
    "CheckpointVersionError",
    "ConfigError",
    "DcsbmConfig",
    "EdgeScore",
    "EventRecord",
    "Gaussian1D",
    "GaussianD",
    "GaussianError",
    "ImproperGaussianError",
    "IngestError",
    "IngestStats",
    "MetricError",
    "Mixture2",
    "ModelConfig",
    "NodeTable",
    "NonCaseSample",
    "NotPositiveDefiniteError",
    "ParamState",
    "PeriodMetrics",
    "PeriodSnapshot",
    "PeriodicityTable",
    "ReplayResult",
    "RunConfig",
    "SamplingError",
    "SamplingPolicy",
    "ScoringError",
    "StateMoments",
    "SubgraphAlarm",
    "SweepStats",
    "TauAssignment",
    "TuningError",
    "auc_roc",
    "bucketize",
    "build_node_table",
    "checkpoint_load",
    "checkpoint_save",
    "derive_seed",
    "divide",
    "enumerate_subgraphs",
    "expit_gauss",
    "fit_period",
    "gen_bilinear",
    "gen_dcsbm",
    "ingest",
    "inflate_priors",
    "init_priors",
    "jitter_latent_means",
    "logit_corr",
    "mgf_bilinear",
    "mgf_scalar",
    "multiply",
    "periodicity_shifts",
    "project_mixture",
    "rank_alarms",
    "rebase_mu_for_log_q",
    "replay",
    "roc_curve",
    "sample_noncases",
    "scan_stat_baseline",
    "score_edges",
    "snapshots_from_arrays",
    "tune_forgetting",
    "__version__",
]
