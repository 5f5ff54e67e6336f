"""Numerical laboratory for graph-convolution ridge regression on the
contextual stochastic block model."""

from .errors import (
    CsbmLabError,
    EmptyResult,
    EstimatorNoisy,
    InterpolationRegion,
    InvalidConfig,
    SolverDiverged,
)
from .model import (
    CsbmConfig,
    Dataset,
    TrainTestSplit,
    generate_labels,
    make_dataset,
    sample_adjacency,
    sample_features,
    sample_split,
)
from .experiments import (
    SummaryRow,
    UniversalityReport,
    run_trials,
    selfloop_scan,
    spectral_analysis,
    sweep,
    theory_columns,
    universality_check,
)
from .regression import RiskReport, build_design, evaluate, fit_ridge, run_instance
from .selfloop import SelfLoopOrderParams, SelfLoopPrediction, selfloop_theory
from .theory import (
    OrderParams,
    TheoryParams,
    TheoryPrediction,
    mp_resolvent_T,
    ridgeless_risks,
    rmt_full_observation,
    rmt_full_observation_csbm,
    rmt_two_hop_ridgeless,
    solve_saddle,
    theory_risks,
)

__version__ = "0.1.0"

__all__ = [
    "CsbmConfig",
    "CsbmLabError",
    "Dataset",
    "EmptyResult",
    "EstimatorNoisy",
    "InterpolationRegion",
    "InvalidConfig",
    "OrderParams",
    "RiskReport",
    "SelfLoopOrderParams",
    "SelfLoopPrediction",
    "SolverDiverged",
    "SummaryRow",
    "TheoryParams",
    "TheoryPrediction",
    "TrainTestSplit",
    "UniversalityReport",
    "build_design",
    "evaluate",
    "fit_ridge",
    "generate_labels",
    "make_dataset",
    "mp_resolvent_T",
    "ridgeless_risks",
    "rmt_full_observation",
    "rmt_full_observation_csbm",
    "rmt_two_hop_ridgeless",
    "run_instance",
    "run_trials",
    "sample_adjacency",
    "sample_features",
    "sample_split",
    "selfloop_scan",
    "selfloop_theory",
    "solve_saddle",
    "spectral_analysis",
    "sweep",
    "theory_columns",
    "theory_risks",
    "universality_check",
    "__version__",
]
