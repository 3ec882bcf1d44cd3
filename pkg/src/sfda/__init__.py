"""Smoothing-spline inference for the difference of two mean curves from
sparse functional data."""

from sfda.errors import (
    DegenerateGCVError,
    FormatError,
    NumericalError,
    RankDeficiencyError,
    SFDAError,
    ValidationError,
)
from sfda.inference import (
    BootstrapEnsemble,
    GlobalTest,
    TestConfig,
    TestReport,
    bootstrap_curves,
    bootstrap_replicate,
    draw_multiplier_weights,
    eval_grid,
    global_test,
    pointwise_band,
    two_sample_test,
)
from sfda.io import emit_report, load_report, parse_csv, sparsify
from sfda.kernel import bernoulli_poly, gram_matrices, kernel_R, null_basis
from sfda.simulation import MCSummary, SimConfig, generate_group, imse, run_mc
from sfda.spline import (
    GroupSample,
    Observation,
    SplineFit,
    evaluate,
    fit_penalized,
    gcv_score,
    select_lambda,
    smoother_trace,
)

__version__ = "0.1.0"
