"""All-time-feasible distributed resource allocation with nonlinear links and delays."""
from .graph import NetworkSchedule, SpectralSummary, WeightedGraph, spectral_summary
from .objective import LogExp, PenaltyAugmented, Problem, Quadratic, SmoothPenaltyAugmented
from .oracle import OracleSolution, solve_kkt
from .protocol import ProtocolConfig, run
from .delay import DelayedRunConfig, DelayModel, run_case_i, run_case_ii
from .analysis import StepBoundReport, Trace, compute_step_bound, residual

__version__ = "0.1.0"
