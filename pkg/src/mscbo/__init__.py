"""Multiscale consensus-based optimization for bi-level, tri-level and min-max problems."""

from .bilevel import BiLevelParams, BiLevelResult, NumericalFailure, run_bilevel
from .consensus import (
    NonFiniteObjectiveError,
    fla_update,
    stabilized_weights,
    weighted_mean,
    x_consensus,
    y_consensus,
)
from .dynamics import (
    StepParams,
    cbo_em_step,
    noise_scale,
    phi_truncate,
    psi_truncate,
    sample_increment,
    substreams,
)
from .harness import ExperimentConfig, McSummary, RunRecord, emit_results, monte_carlo
from .metrics import SUCCESS_THRESHOLD, compute_error, is_success
from .multiscale import (
    EpsSweepReport,
    drift_recurrence_check,
    eps_sweep,
    frozen_fast_run,
    simulate_coupled,
)
from .objectives import (
    BiLevelProblem,
    ObjectiveFn,
    TriLevelProblem,
    ackley,
    builtin_problem,
    levy,
    minmax_as_bilevel,
    rastrigin,
)
from .trilevel import TriLevelParams, TriLevelResult, run_trilevel

__version__ = "0.1.0"
