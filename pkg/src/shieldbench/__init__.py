"""Backup-based safety filters under one shared abstraction, with a harness
for comparing their filter-inactive sets and closed-loop behavior."""

__version__ = "0.1.0"

from .core import ClassKRate, FilterDecision, InputBounds, SafetySpec, alpha
from .dynamics import (
    BicycleModel,
    DoubleIntegrator,
    FlowDivergenceError,
    SensitivityTrace,
    Trajectory,
    eval_dynamics,
    integrate_flow,
    propagate_sensitivity,
    saturate,
)
from .policies import PdGains, PolicySpec, build_policy
from .qp import QpProblem, QpSolution, solve_qp
from .validity import CandidateTrajectory, ValidityReport, build_candidate, check_valid, membership_S
from .backup_cbf import BackupCbfContext, assemble_constraints, bcbf_filter, eval_h_bcbf
from .shields import (
    FilterContexts,
    GkWorkerPool,
    MonitorState,
    ShieldContext,
    gk_search,
    gk_search_parallel,
    gk_step,
    inactive_membership,
    mps_step,
)
from .scenarios import (
    EpisodeLog,
    Metrics,
    ScenarioConfig,
    build_scenario,
    compute_metrics,
    default_config,
    load_config,
    run_episode,
    slice_grid,
)
from .analysis import SetSample, TheoremReport, sample_sets, sweep_horizon, verify_theorem3, verify_theorem4
