"""Scheduled predictive safety filter.

At every step the filter solves::

    minimize    |u_0 - u_L|^2
    subject to  x_0 = x_t,  x_{i+1} = f(x_i, u_i)
                x_i in X (i < N),  u_i in U,  x_N = 0
                J(x, u) <= J*_{t-1} - (1 - rho_t) s*_{t-1}

with ``rho_t`` supplied by the tightening schedule.  The last constraint is
dropped when ``J*_{t-1}`` is infinite.

The NLP is solved by SQP over a multiple-shooting transcription (states and
inputs are both iterates; dynamics defects are constraints).  Each QP is
condensed onto the input increments and handed to the dual active-set
solver in :mod:`scheduled_psf.qp`.  The SQP always starts from the shifted
previous plan, which is feasible by construction, and returns the best
feasible iterate it has seen.
"""

from __future__ import annotations

import contextlib
import contextvars
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .certificate import (
    StageCost,
    TerminalIngredients,
    TrajectoryPlan,
    certificate_value,
    default_stage_cost,
    stage_cost,
)
from .dynamics import DiscreteDynamics, PendulumParams, double_integrator, linearize, pendulum
from .qp import solve_qp
from .scheduler import ScheduleParams, schedule_signal

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER_FEASIBLE = "max-iter-feasible"
FALLBACK = "fallback-shifted-candidate"
INFEASIBLE_T0 = "infeasible-at-t0"
STATUSES = (OPTIMAL, MAX_ITER_FEASIBLE, FALLBACK, INFEASIBLE_T0)


_SOLVES_FORBIDDEN = contextvars.ContextVar("psf_solves_forbidden", default=False)


@contextlib.contextmanager
def solves_forbidden():
    """Any filter solve inside this block raises ``RuntimeError``.

    Used to assert that gradient code never calls into the optimiser.
    """
    token = _SOLVES_FORBIDDEN.set(True)
    try:
        yield
    finally:
        _SOLVES_FORBIDDEN.reset(token)


class InfeasibleStart(RuntimeError):
    """No feasible plan exists (or was found) for the initial state."""


@dataclass(frozen=True)
class SolverSettings:
    tol_feas: float = 1e-7
    tol_kkt: float = 1e-6
    max_iter: int = 50
    max_qp_pivots: int = 100
    regularization: float = 1e-6


@dataclass(frozen=True)
class PsfProblem:
    horizon: int
    dynamics: DiscreteDynamics
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    cost: StageCost
    terminal: TerminalIngredients = TerminalIngredients()
    schedule: ScheduleParams = ScheduleParams()
    settings: SolverSettings = SolverSettings()

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for name in ("x_lo", "x_hi", "u_lo", "u_hi"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n, m = self.dynamics.n, self.dynamics.m
        if self.x_lo.shape != (n,) or self.x_hi.shape != (n,):
            raise ValueError("state box does not match the state dimension")
        if self.u_lo.shape != (m,) or self.u_hi.shape != (m,):
            raise ValueError("input box does not match the input dimension")
        if np.any(self.x_lo > 0) or np.any(self.x_hi < 0):
            raise ValueError("state box must contain the origin")
        if np.any(self.u_lo > 0) or np.any(self.u_hi < 0):
            raise ValueError("input box must contain the origin")
        if self.cost.n != n or self.cost.m != m:
            raise ValueError("stage cost dimensions do not match the dynamics")

    @property
    def n(self):
        return self.dynamics.n

    @property
    def m(self):
        return self.dynamics.m

    def with_schedule(self, schedule: ScheduleParams) -> "PsfProblem":
        return replace(self, schedule=schedule)


def pendulum_problem(
    params: PendulumParams = PendulumParams(),
    horizon: int = 20,
    theta_max: float = 2.6,
    omega_max: float = 8.0,
    u_max: float = 3.0,
    cost: Optional[StageCost] = None,
    schedule: ScheduleParams = ScheduleParams(),
    settings: SolverSettings = SolverSettings(),
) -> PsfProblem:
    return PsfProblem(
        horizon=horizon,
        dynamics=pendulum(params),
        x_lo=[-theta_max, -omega_max],
        x_hi=[theta_max, omega_max],
        u_lo=[-u_max],
        u_hi=[u_max],
        cost=cost if cost is not None else default_stage_cost(),
        schedule=schedule,
        settings=settings,
    )


def double_integrator_problem(
    horizon: int = 2,
    cost: Optional[StageCost] = None,
    schedule: ScheduleParams = ScheduleParams(),
    settings: SolverSettings = SolverSettings(),
) -> PsfProblem:
    return PsfProblem(
        horizon=horizon,
        dynamics=double_integrator(),
        x_lo=[-2.0, -2.0],
        x_hi=[2.0, 2.0],
        u_lo=[-1.0],
        u_hi=[1.0],
        cost=cost if cost is not None else StageCost(np.eye(2), np.eye(1)),
        schedule=schedule,
        settings=settings,
    )


@dataclass
class PsfMemory:
    """Per-trajectory filter state carried between steps.

    ``aligned`` marks a plan that already starts at the current state (the
    warm-start plan at ``t = 0``) and must be used as is rather than shifted.
    """

    J_prev: float = math.inf
    s_prev: float = 0.0
    prev_plan: Optional[TrajectoryPlan] = None
    aligned: bool = False

    def __post_init__(self):
        if math.isfinite(self.J_prev) and self.prev_plan is None:
            raise ValueError("a finite J_prev needs the plan it came from")

    def bound(self, rho):
        if not math.isfinite(self.J_prev):
            return math.inf
        return self.J_prev - (1.0 - rho) * self.s_prev


@dataclass
class PsfSolution:
    plan: TrajectoryPlan
    J_star: float
    applied_input: np.ndarray
    first_stage_cost: float
    status: str
    objective: float
    solver_iterations: int
    rho: float = float("nan")
    J_bound: float = math.inf
    kkt: float = float("nan")


# --------------------------------------------------------------------------
# plan utilities


def rollout(dyn: DiscreteDynamics, x0, inputs):
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    states = np.empty((inputs.shape[0] + 1, dyn.n))
    states[0] = x0
    for i, u in enumerate(inputs):
        states[i + 1] = dyn(states[i], u)
    return states


def plan_violation(
    plan: TrajectoryPlan,
    problem: PsfProblem,
    x0=None,
    J_bound: float = math.inf,
    u_lo=None,
    u_hi=None,
) -> float:
    """Largest constraint violation (infinity norm) of ``plan``."""
    X, U = plan.states, plan.inputs
    u_lo = problem.u_lo if u_lo is None else u_lo
    u_hi = problem.u_hi if u_hi is None else u_hi
    parts = [
        np.abs(problem.dynamics(X[:-1], U) - X[1:]).max(),
        np.abs(X[-1]).max(),
        np.max(X[:-1] - problem.x_hi, initial=0.0),
        np.max(problem.x_lo - X[:-1], initial=0.0),
        np.max(U - u_hi, initial=0.0),
        np.max(u_lo - U, initial=0.0),
    ]
    if x0 is not None:
        parts.append(np.abs(X[0] - np.asarray(x0, dtype=float)).max())
    if math.isfinite(J_bound):
        parts.append(max(certificate_value(plan, problem.cost, problem.terminal) - J_bound, 0.0))
    return float(max(parts))


def validate_plan(plan, problem, x0=None, J_bound=math.inf, tol=None) -> bool:
    tol = problem.settings.tol_feas if tol is None else tol
    return plan_violation(plan, problem, x0, J_bound) <= tol


def shift_candidate(prev: TrajectoryPlan, problem: PsfProblem, check: bool = True) -> TrajectoryPlan:
    """Shift ``prev`` one step and append the terminal control law.

    Under the terminal equality the last predicted state is the origin, so the
    appended input and state are both zero.
    """
    if check and not validate_plan(prev, problem):
        raise ValueError("previous plan is not feasible; cannot build the shifted candidate")
    xN = prev.states[-1]
    u_last = problem.terminal.control_law(xN, problem.m)
    x_last = problem.dynamics(xN, u_last)
    states = np.vstack([prev.states[1:], x_last[None, :]])
    inputs = np.vstack([prev.inputs[1:], u_last[None, :]])
    return TrajectoryPlan(states, inputs)


def default_guess(x0, problem: PsfProblem) -> TrajectoryPlan:
    """States interpolated linearly to the origin, zero inputs."""
    N = problem.horizon
    w = np.linspace(1.0, 0.0, N + 1)[:, None]
    return TrajectoryPlan(w * np.asarray(x0, dtype=float)[None, :], np.zeros((N, problem.m)))


# --------------------------------------------------------------------------
# SQP


@dataclass
class _SqpResult:
    plan: Optional[TrajectoryPlan]
    converged: bool
    iterations: int
    kkt: float


def _condense(A, B, defect):
    """Express state increments as ``dX[i] = Gam[i] @ dU + gam[i]``."""
    N, n, m = B.shape
    Gam = np.zeros((N + 1, n, N * m))
    gam = np.zeros((N + 1, n))
    for i in range(N):
        Gam[i + 1] = A[i] @ Gam[i]
        Gam[i + 1][:, i * m : (i + 1) * m] += B[i]
        gam[i + 1] = A[i] @ gam[i] + defect[i]
    return Gam, gam


def _sqp(
    problem: PsfProblem,
    x0,
    guess: TrajectoryPlan,
    u_target,
    weight: float,
    J_bound: float,
    u_lo,
    u_hi,
) -> _SqpResult:
    if _SOLVES_FORBIDDEN.get():
        raise RuntimeError("filter solve attempted inside a solves_forbidden() block")
    st = problem.settings
    dyn, cost = problem.dynamics, problem.cost
    N, n, m = problem.horizon, problem.n, problem.m
    Q, R = cost.Q, cost.R
    x0 = np.asarray(x0, dtype=float)
    u_target = np.zeros(m) if u_target is None else np.asarray(u_target, dtype=float)
    has_J = math.isfinite(J_bound)
    xfin_hi = np.isfinite(problem.x_hi)
    xfin_lo = np.isfinite(problem.x_lo)

    X = guess.states.copy()
    U = np.clip(guess.inputs.copy(), u_lo, u_hi)
    X[0] = x0

    def objective(U):
        d = U[0] - u_target
        return weight * float(d @ d)

    def violation_l1(X, U):
        v = np.abs(dyn(X[:-1], U) - X[1:]).sum() + np.abs(X[-1]).sum()
        v += np.maximum(X[1:-1] - problem.x_hi, 0).sum() + np.maximum(problem.x_lo - X[1:-1], 0).sum()
        if has_J:
            v += max(float(np.sum(stage_cost(X[:-1], U, cost))) - J_bound, 0.0)
        return float(v)

    best_plan, best_obj = None, math.inf

    def consider(U):
        nonlocal best_plan, best_obj
        Xr = rollout(dyn, x0, U)
        plan = TrajectoryPlan(Xr, U.copy())
        if plan_violation(plan, problem, None, J_bound, u_lo, u_hi) <= st.tol_feas:
            obj = objective(U)
            if obj < best_obj - 1e-15:
                best_plan, best_obj = plan, obj
            return plan
        return None

    consider(U)
    penalty = 1.0
    mu_J = 0.0
    kkt = math.inf
    eye = st.regularization * np.eye(N * m)
    for it in range(1, st.max_iter + 1):
        A, B = linearize(dyn, X[:-1], U)
        defect = dyn(X[:-1], U) - X[1:]
        Gam, gam = _condense(A, B, defect)

        # objective: weight * |U0 + dU0 - target|^2
        g = np.zeros(N * m)
        H = eye.copy()
        g[:m] = 2.0 * weight * (U[0] - u_target)
        H[:m, :m] += 2.0 * weight * np.eye(m)

        C_in, d_in = [], []
        mid = slice(1, N)
        if N > 1:
            Gm = Gam[mid][:, xfin_hi].reshape(-1, N * m)
            C_in.append(Gm)
            d_in.append((problem.x_hi[None, xfin_hi] - X[mid][:, xfin_hi] - gam[mid][:, xfin_hi]).ravel())
            Gm = Gam[mid][:, xfin_lo].reshape(-1, N * m)
            C_in.append(-Gm)
            d_in.append((X[mid][:, xfin_lo] + gam[mid][:, xfin_lo] - problem.x_lo[None, xfin_lo]).ravel())
        In = np.eye(N * m)
        C_in += [In, -In]
        d_in += [(u_hi - U).ravel(), (U - u_lo).ravel()]
        if has_J:
            QX = 2.0 * (X[:-1] @ Q)  # (N, n)
            row = np.einsum("in,inp->p", QX, Gam[:-1]) + 2.0 * (U @ R).ravel()
            J_now = float(np.sum(stage_cost(X[:-1], U, cost)))
            const = J_now + float(np.sum(QX * gam[:-1]))
            C_in.append(row[None, :])
            d_in.append(np.array([J_bound - const]))
            if mu_J > 0:
                HJ = 2.0 * np.einsum("inp,nk,ikq->pq", Gam[:-1], Q, Gam[:-1])
                HJ += 2.0 * np.kron(np.eye(N), R)
                H += mu_J * HJ
        C_in = np.vstack(C_in)
        d_in = np.concatenate(d_in)
        C_eq = Gam[N]
        d_eq = -(X[N] + gam[N])

        qp = solve_qp(H, g, C_eq, d_eq, C_in, d_in, max_pivots=st.max_qp_pivots)
        if not qp.ok:
            log.debug("QP %s at SQP iteration %d", qp.status, it)
            return _SqpResult(best_plan, False, it, kkt)
        dU = qp.x
        if has_J:
            mu_J = float(qp.lam_in[-1])
        kkt = float(np.abs(H @ dU).max())
        dUm = dU.reshape(N, m)
        dX = np.einsum("inp,p->in", Gam, dU) + gam

        viol = violation_l1(X, U)
        lam_max = max(np.abs(qp.lam_eq).max(initial=0.0), np.abs(qp.lam_in).max(initial=0.0))
        penalty = max(penalty, 2.0 * lam_max + 1e-3)
        phi0 = objective(U) + penalty * viol
        D = float(g @ dU) - penalty * viol
        alpha = 1.0
        while True:
            Xn = X + alpha * dX
            Un = U + alpha * dUm
            phin = objective(Un) + penalty * violation_l1(Xn, Un)
            if phin <= phi0 + 1e-4 * alpha * min(D, 0.0) + 1e-14 * (1 + abs(phi0)) or alpha < 1e-4:
                break
            alpha *= 0.5
        X, U = Xn, np.clip(Un, u_lo, u_hi)
        X[0] = x0

        step = float(np.abs(alpha * dU).max())
        if kkt <= st.tol_kkt and step <= 1e-8 and viol <= 1e-2 * st.tol_feas:
            plan = consider(U)
            if plan is not None:
                # converged iterate: return it even if an earlier feasible
                # iterate had a marginally smaller objective
                return _SqpResult(plan, True, it, kkt)
        else:
            consider(U)
    return _SqpResult(best_plan, False, st.max_iter, kkt)


# --------------------------------------------------------------------------
# filter


def _stage_bounds(problem, first_lo=None, first_hi=None):
    u_lo = np.tile(problem.u_lo, (problem.horizon, 1))
    u_hi = np.tile(problem.u_hi, (problem.horizon, 1))
    if first_lo is not None:
        u_lo[0] = first_lo
    if first_hi is not None:
        u_hi[0] = first_hi
    return u_lo, u_hi


def _candidate(x_t, memory: PsfMemory, problem: PsfProblem):
    if memory.prev_plan is None:
        return None
    if memory.aligned:
        cand = memory.prev_plan.copy()
    else:
        cand = shift_candidate(memory.prev_plan, problem, check=False)
    cand.states = rollout(problem.dynamics, x_t, cand.inputs)
    return cand


def _solution(plan, problem, status, u_L, iterations, rho, J_bound, kkt=float("nan")):
    d = plan.inputs[0] - u_L
    return PsfSolution(
        plan=plan,
        J_star=certificate_value(plan, problem.cost, problem.terminal),
        applied_input=plan.inputs[0].copy(),
        first_stage_cost=float(stage_cost(plan.states[0], plan.inputs[0], problem.cost)),
        status=status,
        objective=float(d @ d),
        solver_iterations=iterations,
        rho=rho,
        J_bound=J_bound,
        kkt=kkt,
    )


def solve_psf(x_t, u_L_t, rho_t: float, memory: PsfMemory, problem: PsfProblem) -> PsfSolution:
    """Solve one filter problem; never raises for an infeasible start.

    The returned status tells the caller what happened; with
    ``infeasible-at-t0`` the plan is the unusable default guess.
    """
    x_t = np.asarray(x_t, dtype=float)
    u_L_t = np.atleast_1d(np.asarray(u_L_t, dtype=float))
    J_bound = memory.bound(rho_t)
    u_lo, u_hi = _stage_bounds(problem)
    cand = _candidate(x_t, memory, problem)
    guess = cand if cand is not None else default_guess(x_t, problem)
    res = _sqp(problem, x_t, guess, u_L_t, 1.0, J_bound, u_lo, u_hi)
    if res.plan is not None:
        status = OPTIMAL if res.converged else MAX_ITER_FEASIBLE
        return _solution(res.plan, problem, status, u_L_t, res.iterations, rho_t, J_bound, res.kkt)
    if cand is not None:
        viol = plan_violation(cand, problem, x_t, J_bound)
        if viol > problem.settings.tol_feas:
            log.warning("shifted candidate violates constraints by %.3g", viol)
        return _solution(cand, problem, FALLBACK, u_L_t, res.iterations, rho_t, J_bound)
    return _solution(guess, problem, INFEASIBLE_T0, u_L_t, res.iterations, rho_t, J_bound)


def filter_step(x_t, u_L_t, memory: PsfMemory, problem: PsfProblem, rho: Optional[float] = None):
    """One receding-horizon step of the filter policy.

    ``rho`` overrides the schedule (fixed-rate baseline); by default the rate
    is ``psi(||u_L||)``.  Returns ``(applied_input, new_memory, solution)``.
    """
    rho_t = schedule_signal(u_L_t, problem.schedule) if rho is None else float(rho)
    sol = solve_psf(x_t, u_L_t, rho_t, memory, problem)
    if sol.status == INFEASIBLE_T0:
        raise InfeasibleStart(f"no feasible plan from x = {np.asarray(x_t).tolist()}")
    new_memory = PsfMemory(sol.J_star, sol.first_stage_cost, sol.plan, aligned=False)
    return sol.applied_input, new_memory, sol


def init_memory(x_0, problem: PsfProblem, mode: str = "warm-start") -> PsfMemory:
    """Initial filter memory.

    ``warm-start`` solves a feasibility problem (minimum ``|u_0|``, no
    certificate constraint) and uses its certificate as ``J*_{-1}`` with a
    zero previous stage cost, so the warm plan itself stays admissible at
    ``t = 0``.  ``deactivate-first-step`` sets ``J*_{-1} = +inf``.
    """
    if mode == "deactivate-first-step":
        return PsfMemory()
    if mode != "warm-start":
        raise ValueError(f"unknown init mode {mode!r}")
    x_0 = np.asarray(x_0, dtype=float)
    u_lo, u_hi = _stage_bounds(problem)
    res = _sqp(problem, x_0, default_guess(x_0, problem), None, 1.0, math.inf, u_lo, u_hi)
    if res.plan is None:
        raise InfeasibleStart(f"warm start infeasible from x = {x_0.tolist()}")
    J = certificate_value(res.plan, problem.cost, problem.terminal)
    return PsfMemory(J, 0.0, res.plan, aligned=True)


def solve_with_first_input(x_t, v, J_bound: float, problem: PsfProblem, guess=None):
    """Feasibility solve with ``u_0`` pinned to ``v``; returns a plan or None."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if np.any(v < problem.u_lo - 1e-12) or np.any(v > problem.u_hi + 1e-12):
        return None
    u_lo, u_hi = _stage_bounds(problem, v, v)
    if guess is None:
        guess = default_guess(x_t, problem)
        guess.inputs[0] = v
    res = _sqp(problem, x_t, guess, None, 0.0, J_bound, u_lo, u_hi)
    return res.plan
