"""Predictive safety filter with a scheduled Lyapunov-decrease rate and a
magnitude-and-direction performance policy."""

from .psf import (
    InfeasibleStart,
    PsfMemory,
    PsfProblem,
    PsfSolution,
    SolverSettings,
    double_integrator_problem,
    filter_step,
    init_memory,
    pendulum_problem,
    solve_psf,
)
from .scheduler import ScheduleParams, psi, psi_smooth, schedule_signal

__version__ = "0.1.0"
