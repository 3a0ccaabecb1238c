"""Funnel feedback that stabilises under both positive and negative feedback."""
from ._jit import backend
from .chi import (
    ChiEvaluation,
    CompactBox,
    GridResolution,
    UnboundednessCertificate,
    certify_unboundedness,
    chi_eval,
    continuity_probe,
    nu_eval,
    s_sequence,
)
from .core import (
    DriftFunction,
    FeedbackSign,
    FunnelBoundaryError,
    FunnelFunction,
    PerturbationSignal,
    alpha_eval,
    closed_loop_rhs,
    g_eval,
    h_eval,
)
from .engine import (
    InvariantReport,
    ScenarioSpec,
    Status,
    Tolerances,
    Trajectory,
    check_invariants,
    gain_timeseries,
    integrate,
)

__version__ = "0.1.0"
