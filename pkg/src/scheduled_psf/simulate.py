"""Closed-loop episodes of pendulum + filter, trajectory CSV files and summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .pendulum_env import (
    AugmentedState,
    EnvParams,
    collides,
    env_step,
    min_clearance,
    occupancy_band,
)
from .psf import PsfMemory, PsfProblem, filter_step, init_memory

CSV_HEADER = ("t", "theta", "omega", "u", "u_L_norm", "rho", "J_star", "status", "obstacle_x")
SOLVER_HEADER = ("t", "rho", "J_star", "objective", "status", "iterations")


class SchemaError(ValueError):
    pass


@dataclass
class StepRecord:
    t: int
    theta: float
    omega: float
    u: float
    u_L_norm: float
    rho: float
    J_star: float
    status: str
    obstacle_x: float
    objective: float = float("nan")
    iterations: int = 0
    stage_cost: float = float("nan")
    J_prev: float = float("nan")
    s_prev: float = float("nan")


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    final_state: Optional[np.ndarray] = None
    env: EnvParams = EnvParams()

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def thetas(self):
        return self.column("theta")

    def certificate_steps(self, tol=1e-6):
        """Steps where ``J*_t > J*_{t-1} - (1 - rho_t) s_{t-1} + tol``."""
        bad = []
        for r in self.records:
            if math.isfinite(r.J_prev) and r.J_star > r.J_prev - (1.0 - r.rho) * r.s_prev + tol:
                bad.append(r.t)
        return bad

    def tail_bound(self, epsilon, rho_bar):
        """``(lhs, rhs)`` of ``(1 - rho_bar) sum_{t > T} s_t <= J*_T``.

        ``T`` is the last step with ``|u_L| > epsilon`` (0 if there is none).
        """
        uL = self.column("u_L_norm")
        above = np.nonzero(uL > epsilon)[0]
        T = int(above[-1]) if above.size else 0
        s = self.column("stage_cost")
        J = self.column("J_star")
        return (1.0 - rho_bar) * float(np.sum(s[T + 1 :])), float(J[T])

    def summary(self):
        J = self.column("J_star")
        rho = self.column("rho")
        thetas = self.thetas
        obs = self.column("obstacle_x")
        dJ = np.diff(J)
        final = self.final_state if self.final_state is not None else np.array([thetas[-1], 0.0])
        return {
            "steps": len(self.records),
            "collision": bool(collides(thetas, obs, self.env)),
            "min_clearance": min_clearance(thetas, obs, self.env),
            "terminal_abs_theta": float(abs(final[0])),
            "terminal_state_norm": float(np.linalg.norm(final)),
            "max_rho": float(np.max(rho)),
            "J_nonincreasing": bool(np.all(dJ <= 1e-9 * (1 + np.abs(J[:-1])))),
            "J_transient_increase": bool(np.any(dJ > 0)),
            "certificate_decrease_ok": not self.certificate_steps(),
            "statuses": {str(s): int(c) for s, c in zip(*np.unique(self.column("status"), return_counts=True))},
            "max_abs_theta": float(np.max(np.abs(thetas))),
            "max_abs_u": float(np.max(np.abs(self.column("u")))),
        }


def zero_input(m=1):
    return lambda t, state, memory: np.zeros(m)


def pulse_input(amplitude, length, m=1):
    """Finite-support input: ``amplitude`` for ``t < length``, zero after."""
    amp = np.broadcast_to(np.asarray(amplitude, dtype=float), (m,)).copy()
    return lambda t, state, memory: amp.copy() if t < length else np.zeros(m)


def sequence_input(seq):
    seq = np.atleast_2d(np.asarray(seq, dtype=float))
    if seq.shape[0] == 1 and seq.shape[1] > 1:
        seq = seq.T
    m = seq.shape[1]
    return lambda t, state, memory: seq[t].copy() if t < len(seq) else np.zeros(m)


def policy_input(policy, J_scale=None):
    """Drive ``u_L`` from a MAD policy.

    The direction network sees ``[theta, omega, obstacle x, obstacle velocity,
    J*_{t-1} / J*_{-1}]``.
    """
    from .mad_policy import mad_forward

    st = {"policy": policy, "x0": None, "J0": J_scale}

    def source(t, state: AugmentedState, memory: PsfMemory):
        if t == 0:
            st["policy"].reset()
            st["x0"] = state.physical.copy()
            st["J0"] = J_scale if J_scale is not None else memory.J_prev
        x_aug = policy_features(state, memory, st["J0"])
        x0e = st["x0"] if t == 0 else np.zeros_like(st["x0"])
        u_L, st["policy"] = mad_forward(st["policy"], x_aug, x0e)
        return u_L

    return source


def policy_features(state: AugmentedState, memory: PsfMemory, J0):
    J0 = J0 if (J0 is not None and math.isfinite(J0) and J0 > 0) else 1.0
    J = memory.J_prev if math.isfinite(memory.J_prev) else J0
    return np.append(state.features(), J / J0)


def run_closed_loop(
    problem: PsfProblem,
    state0: AugmentedState,
    u_L_source: Callable,
    steps: int,
    env: EnvParams = EnvParams(),
    fixed_rate: bool = False,
    init_mode: str = "warm-start",
    memory: Optional[PsfMemory] = None,
) -> Trajectory:
    """Simulate ``steps`` filter steps.

    ``fixed_rate`` pins ``rho_t`` to the schedule plateau instead of
    ``psi(|u_L|)``.  Raises :class:`InfeasibleStart` if ``t = 0`` fails.
    """
    mem = memory if memory is not None else init_memory(state0.physical, problem, init_mode)
    rho_fixed = problem.schedule.rho_bar if fixed_rate else None
    traj = Trajectory(env=env)
    s = state0
    for t in range(steps):
        u_L = np.atleast_1d(u_L_source(t, s, mem))
        u, new_mem, sol = filter_step(s.physical, u_L, mem, problem, rho=rho_fixed)
        traj.records.append(
            StepRecord(
                t=t,
                theta=float(s.physical[0]),
                omega=float(s.physical[1]),
                u=float(u[0]),
                u_L_norm=float(np.linalg.norm(u_L)),
                rho=float(sol.rho),
                J_star=float(sol.J_star),
                status=sol.status,
                obstacle_x=float(s.obstacle.x),
                objective=sol.objective,
                iterations=sol.solver_iterations,
                stage_cost=sol.first_stage_cost,
                J_prev=float(mem.J_prev),
                s_prev=float(mem.s_prev),
            )
        )
        mem = new_mem
        s = env_step(s, u, env)
    traj.final_state = s.physical.copy()
    return traj


# --------------------------------------------------------------------------
# files


def write_trajectory_csv(traj: Trajectory, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in traj.records:
            w.writerow([r.t, repr(r.theta), repr(r.omega), repr(r.u), repr(r.u_L_norm),
                        repr(r.rho), repr(r.J_star), r.status, repr(r.obstacle_x)])


def write_solver_csv(traj: Trajectory, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SOLVER_HEADER)
        for r in traj.records:
            w.writerow([r.t, repr(r.rho), repr(r.J_star), repr(r.objective), r.status, r.iterations])


def read_trajectory_csv(path):
    """Parse a trajectory CSV, rejecting any header that is not exactly the schema."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = tuple(rows[0])
    if header != CSV_HEADER:
        missing = [c for c in CSV_HEADER if c not in header]
        detail = f"missing column {missing[0]!r}" if missing else f"unexpected header {header}"
        raise SchemaError(f"{path}: {detail}")
    out = {c: [] for c in CSV_HEADER}
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise SchemaError(f"{path}:{k}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        for c, v in zip(CSV_HEADER, row):
            out[c].append(v)
    cols = {c: np.array(out[c], dtype=float) for c in CSV_HEADER if c != "status"}
    cols["t"] = cols["t"].astype(int)
    cols["status"] = np.array(out["status"], dtype=str)
    return cols


def write_occupancy_csv(obstacle_x, dt, env: EnvParams, path):
    """Obstacle region in the (t, theta) plane, one interval per step."""
    lo, hi = occupancy_band(obstacle_x, env)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "time", "theta_low", "theta_high"))
        for t, (a, b) in enumerate(zip(lo, hi)):
            w.writerow([t, repr(t * dt), repr(float(a)), repr(float(b))])
