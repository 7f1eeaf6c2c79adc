"""Gridded admissible input sets and the inclusion / separation checks.

The admissible set at time ``t`` is the set of first inputs ``v`` for which
some completion of the horizon satisfies dynamics, boxes, the terminal
constraint and ``J <= J_prev - (1 - rho) s_prev``.  Two backends decide
membership on an input grid:

* ``exhaustive``: enumerate every grid completion and keep the smallest
  certificate per ``v``.  Exact on the grid, so it is the oracle.  Only
  viable for tiny problems (``N <= 3``, scalar input).
* ``solver``: pin ``u_0 = v`` and ask the filter's SQP for any feasible plan.

With the terminal equality, a completion only exists on the grid if the
state is on the input lattice; queries use lattice states throughout.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .certificate import stage_cost
from .psf import PsfMemory, PsfProblem, filter_step, init_memory, solve_with_first_input
from .scheduler import psi

EXHAUSTIVE = "exhaustive"
SOLVER = "solver"


@dataclass(frozen=True)
class GridSpec:
    """Per-dimension grid ``lo, lo + res, ..., hi`` (endpoints included)."""

    lo: tuple
    hi: tuple
    resolution: float = 0.01

    def __post_init__(self):
        lo, hi = np.atleast_1d(self.lo), np.atleast_1d(self.hi)
        object.__setattr__(self, "lo", tuple(float(a) for a in lo))
        object.__setattr__(self, "hi", tuple(float(a) for a in hi))
        for a, b in zip(self.lo, self.hi):
            k = (b - a) / self.resolution
            if b < a or abs(k - round(k)) > 1e-9:
                raise ValueError(f"grid [{a}, {b}] is not a whole number of {self.resolution} cells")

    @classmethod
    def for_problem(cls, problem: PsfProblem, resolution=0.01):
        return cls(tuple(problem.u_lo), tuple(problem.u_hi), resolution)

    def axes(self):
        r = self.resolution
        return [np.arange(round(a / r), round(b / r) + 1) * r for a, b in zip(self.lo, self.hi)]

    def points(self):
        """``(K, m)`` grid points, last axis fastest."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes())


@dataclass
class AdmissibleSetQuery:
    x: np.ndarray
    J_prev: float
    s_prev: float
    rho: float
    grid: GridSpec
    problem: PsfProblem

    @property
    def bound(self):
        if not math.isfinite(self.J_prev):
            return math.inf
        return self.J_prev - (1.0 - self.rho) * self.s_prev


@dataclass
class AdmissibleSet:
    grid: GridSpec
    mask: np.ndarray  # (K,) bool
    slack: np.ndarray  # bound - smallest certificate; -inf where no completion exists
    bound: float
    backend: str

    @property
    def points(self):
        return self.grid.points()

    @property
    def members(self):
        return self.points[self.mask]

    def __len__(self):
        return int(self.mask.sum())


# --------------------------------------------------------------------------
# exhaustive oracle


def certificate_profile(x, problem: PsfProblem, grid: GridSpec, tol=None):
    """Smallest certificate over grid completions, per first input.

    Returns a ``(K,)`` array, ``inf`` where no completion is feasible.  The
    certificate bound is left out, so one profile answers every ``(rho, J)``.
    """
    tol = problem.settings.tol_feas if tol is None else tol
    N, dyn, cost = problem.horizon, problem.dynamics, problem.cost
    if N > 3:
        raise ValueError("exhaustive enumeration is limited to N <= 3")
    G = grid.points()
    K = len(G)
    x = np.asarray(x, dtype=float)
    if np.any(x > problem.x_hi + tol) or np.any(x < problem.x_lo - tol):
        return np.full(K, np.inf)
    tails = np.array(list(itertools.product(range(K), repeat=N - 1)), dtype=int).reshape(-1, N - 1)
    out = np.full(K, np.inf)
    s0 = stage_cost(x, G, cost)
    x1 = dyn(np.broadcast_to(x, (K, x.size)), G)
    for k in range(K):
        X = np.broadcast_to(x1[k], (len(tails), x.size))
        J = np.full(len(tails), s0[k])
        ok = np.ones(len(tails), dtype=bool)
        for i in range(N - 1):
            ok &= np.all(X <= problem.x_hi + tol, axis=1) & np.all(X >= problem.x_lo - tol, axis=1)
            U = G[tails[:, i]]
            J = J + stage_cost(X, U, cost)
            X = dyn(X, U)
        ok &= np.max(np.abs(X), axis=1) <= tol
        if ok.any():
            out[k] = float(np.min(J[ok])) + float(problem.terminal.cost(np.zeros(x.size)))
    return out


def _from_profile(profile, q: AdmissibleSetQuery, tol):
    with np.errstate(invalid="ignore"):
        slack = q.bound - profile
    slack = np.where(np.isfinite(profile), slack, -np.inf)
    return AdmissibleSet(q.grid, slack >= -tol, slack, q.bound, EXHAUSTIVE)


def admissible_input_set(q: AdmissibleSetQuery, backend: str = EXHAUSTIVE, profile=None) -> AdmissibleSet:
    """Grid membership of the admissible first-input set.

    ``profile`` (from :func:`certificate_profile`) can be passed in to reuse
    the enumeration across queries at the same state.
    """
    tol = q.problem.settings.tol_feas
    if backend == EXHAUSTIVE:
        if profile is None:
            profile = certificate_profile(q.x, q.problem, q.grid)
        return _from_profile(profile, q, tol)
    if backend != SOLVER:
        raise ValueError(f"unknown backend {backend!r}")
    G = q.grid.points()
    mask = np.zeros(len(G), dtype=bool)
    slack = np.full(len(G), -np.inf)
    for k, v in enumerate(G):
        plan = solve_with_first_input(q.x, v, q.bound, q.problem)
        if plan is not None:
            mask[k] = True
            J = float(np.sum(stage_cost(plan.states[:-1], plan.inputs, q.problem.cost)))
            slack[k] = q.bound - J
    return AdmissibleSet(q.grid, mask, slack, q.bound, SOLVER)


def boundary_cells(mask, shape):
    """Points within one grid cell (Chebyshev) of a membership change."""
    m = mask.reshape(shape)
    near = np.zeros_like(m)
    pad = np.pad(m, 1, mode="edge")
    for off in itertools.product((-1, 0, 1), repeat=m.ndim):
        sl = tuple(slice(1 + o, 1 + o + s) for o, s in zip(off, m.shape))
        near |= pad[sl] != m
    return near.ravel()


def backend_disagreements(oracle: AdmissibleSet, other: AdmissibleSet):
    """Grid indices where the backends differ away from the oracle's boundary."""
    diff = oracle.mask != other.mask
    return np.nonzero(diff & ~boundary_cells(oracle.mask, oracle.grid.shape))[0]


# --------------------------------------------------------------------------
# inclusion


@dataclass
class InclusionReport:
    rho: tuple
    J_prev: tuple
    s_prev: float
    x: list
    sizes: tuple
    included: bool
    strict: bool
    precondition: bool
    witnesses: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def constraint_active(s: AdmissibleSet, J_prev, tol_rel=1e-4):
    """Some member attains the certificate bound within ``tol_rel (1 + J_prev)``."""
    if not s.mask.any() or not math.isfinite(s.bound):
        return False
    return float(np.min(s.slack[s.mask])) < tol_rel * (1.0 + abs(J_prev))


def verify_inclusion(q1: AdmissibleSetQuery, q2: AdmissibleSetQuery, backend=EXHAUSTIVE, profile=None):
    """Check ``U(rho1, J1) subset U(rho2, J2)`` on the shared grid."""
    if not np.array_equal(q1.x, q2.x) or q1.s_prev != q2.s_prev or q1.grid != q2.grid:
        raise ValueError("queries must share the state, s_prev and grid")
    if q1.rho > q2.rho or q1.J_prev > q2.J_prev:
        raise ValueError("need rho1 <= rho2 and J1 <= J2")
    if backend == EXHAUSTIVE and profile is None:
        profile = certificate_profile(q1.x, q1.problem, q1.grid)
    s1 = admissible_input_set(q1, backend, profile)
    s2 = admissible_input_set(q2, backend, profile)
    pts = s1.points
    bad = np.nonzero(s1.mask & ~s2.mask)[0]
    extra = np.nonzero(s2.mask & ~s1.mask)[0]
    return InclusionReport(
        rho=(q1.rho, q2.rho),
        J_prev=(q1.J_prev, q2.J_prev),
        s_prev=q1.s_prev,
        x=np.asarray(q1.x).tolist(),
        sizes=(len(s1), len(s2)),
        included=bad.size == 0,
        strict=bad.size == 0 and extra.size > 0,
        precondition=q1.s_prev > 0 and constraint_active(s1, q1.J_prev),
        witnesses=pts[extra[:5]].tolist(),
        violations=[
            {"v": pts[i].tolist(), "slack1": float(s1.slack[i]), "slack2": float(s2.slack[i])} for i in bad
        ],
    )


def lattice_state(rng, lo, hi, resolution=0.01):
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    k = rng.integers(np.round(lo / resolution), np.round(hi / resolution) + 1)
    return k * resolution


def random_inclusion_queries(problem: PsfProblem, count, rng, grid: Optional[GridSpec] = None, state_box=1.0):
    """Random ``(q1, q2)`` pairs at lattice states, ``rho1 <= rho2``, ``J1 <= J2``.

    Half of the pairs anchor ``J1`` so that a feasible grid input attains the
    ``rho1`` bound exactly, which is where strict enlargement can show up.
    Returns ``[(q1, q2, profile), ...]``.
    """
    rng = np.random.default_rng(rng)
    grid = grid or GridSpec.for_problem(problem)
    sch = problem.schedule
    out = []
    while len(out) < count:
        x = lattice_state(rng, -state_box * np.ones(problem.n), state_box * np.ones(problem.n), grid.resolution)
        profile = certificate_profile(x, problem, grid)
        feas = np.isfinite(profile)
        if not feas.any():
            continue
        s_prev = float(rng.choice([0.0, rng.uniform(0.05, 2.0)], p=[0.1, 0.9]))
        rho1 = float(rng.choice([sch.rho_bar, rng.uniform(0.0, 1.0)]))
        rho2 = float(rng.choice([rho1, rng.uniform(rho1, sch.rho_max)]))
        if len(out) % 2 == 0:
            anchor = float(rng.choice(profile[feas]))
            J1 = anchor + (1.0 - rho1) * s_prev
        else:
            J1 = float(rng.uniform(0.0, 2.0) * np.max(profile[feas]))
        J2 = J1 + float(rng.choice([0.0, rng.uniform(0.0, 10.0)]))
        q1 = AdmissibleSetQuery(x, J1, s_prev, rho1, grid, problem)
        q2 = AdmissibleSetQuery(x, J2, s_prev, rho2, grid, problem)
        out.append((q1, q2, profile))
    return out


# --------------------------------------------------------------------------
# separation


@dataclass
class SeparationFixture:
    """A prefix shared by both filters up to ``t_tilde``."""

    x0: np.ndarray
    prefix_inputs: np.ndarray  # (t_tilde, m)
    state: np.ndarray  # x_{t_tilde}
    memory: PsfMemory  # memory entering t_tilde (identical for both modes)
    t_tilde: int


def shared_prefix(x0, prefix_inputs, problem: PsfProblem, init_mode="warm-start", tol=1e-6):
    """Drive both filters with ``u_L = prefix input`` and check they agree.

    Raises ``ValueError`` if either filter modifies a prefix input or the
    certificates differ, since then the prefix is not shared.
    """
    prefix_inputs = np.atleast_2d(np.asarray(prefix_inputs, dtype=float))
    mem_s = mem_f = init_memory(x0, problem, init_mode)
    x = np.asarray(x0, dtype=float)
    for u in prefix_inputs:
        us, mem_s, _ = filter_step(x, u, mem_s, problem)
        uf, mem_f, _ = filter_step(x, u, mem_f, problem, rho=problem.schedule.rho_bar)
        if np.max(np.abs(us - u)) > tol or np.max(np.abs(uf - u)) > tol:
            raise ValueError(f"prefix input {u.tolist()} is not applied by both filters")
        if abs(mem_s.J_prev - mem_f.J_prev) > tol * (1 + abs(mem_f.J_prev)):
            raise ValueError("filters disagree on the certificate along the prefix")
        x = problem.dynamics(x, u)
    return SeparationFixture(np.asarray(x0, float), prefix_inputs, x, mem_f, len(prefix_inputs))


@dataclass
class SeparationWitness:
    v: np.ndarray
    rho_sch: float
    distance: float  # to the nearest fixed-rate member
    fixed_set: AdmissibleSet
    scheduled_mask: np.ndarray


def find_separating_input(fx: SeparationFixture, problem: PsfProblem, grid: Optional[GridSpec] = None):
    """Grid input admissible for the scheduled filter at ``t_tilde`` but not the fixed one.

    The scheduled rate is ``psi(|v|)`` per candidate.  Among witnesses the one
    farthest from the fixed-rate set is returned; ``None`` if there is none.
    """
    grid = grid or GridSpec.for_problem(problem)
    sch = problem.schedule
    profile = certificate_profile(fx.state, problem, grid)
    J, s = fx.memory.J_prev, fx.memory.s_prev
    fixed = admissible_input_set(AdmissibleSetQuery(fx.state, J, s, sch.rho_bar, grid, problem), profile=profile)
    G = grid.points()
    rho = np.array([psi(float(np.linalg.norm(v)), sch) for v in G])
    bound = J - (1.0 - rho) * s if math.isfinite(J) else np.full(len(G), np.inf)
    sched = np.isfinite(profile) & (profile <= bound + problem.settings.tol_feas)
    cand = np.nonzero(sched & ~fixed.mask & (rho > sch.rho_bar))[0]
    if cand.size == 0:
        return None
    if fixed.mask.any():
        dist = np.min(np.linalg.norm(G[cand][:, None, :] - fixed.members[None, :, :], axis=-1), axis=1)
    else:
        dist = np.full(cand.size, np.inf)
    k = int(np.argmax(np.where(np.isfinite(dist), dist, 1e300)))
    i = cand[k]
    return SeparationWitness(G[i].copy(), float(rho[i]), float(dist[k]), fixed, sched)


def construct_separating_uL(prefix_inputs, v, total_steps):
    """``u_L = (u_0, ..., u_{t~-1}, v, 0, 0, ...)``, padded to ``total_steps``."""
    prefix_inputs = np.atleast_2d(np.asarray(prefix_inputs, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    t = len(prefix_inputs)
    if total_steps <= t:
        raise ValueError("total_steps must extend past t_tilde")
    seq = np.zeros((total_steps, v.size))
    seq[:t] = prefix_inputs
    seq[t] = v
    return seq


@dataclass
class SeparationReport:
    t_tilde: int
    witness: Optional[list]
    rho_sch: float
    applied_at_t_tilde: Optional[list]
    applied_matches_witness: bool
    outside_fixed_set: bool
    psi_above_rho_bar: bool
    fixed_objective: float
    fixed_objective_exceeds_grid: bool
    tail_ok: bool
    separated: bool

    def to_dict(self):
        return asdict(self)


def check_separation(fx: SeparationFixture, problem: PsfProblem, v=None, steps=10, grid=None, tol=1e-6):
    """End-to-end separation: scheduled run applies ``v`` at ``t~``, fixed run cannot.

    With ``v=None`` the witness is searched with :func:`find_separating_input`.
    Passing a non-witness ``v`` gives the negative control.
    """
    grid = grid or GridSpec.for_problem(problem)
    sch = problem.schedule
    if v is None:
        w = find_separating_input(fx, problem, grid)
        if w is None:
            return SeparationReport(fx.t_tilde, None, float("nan"), None, False, False, False, 0.0, False, False, False)
        v = w.v
    v = np.atleast_1d(np.asarray(v, dtype=float))
    seq = construct_separating_uL(fx.prefix_inputs, v, steps)

    # scheduled closed loop with the constructed input
    mem = init_memory(fx.x0, problem)
    x = fx.x0.copy()
    applied, J, s = [], [], []
    for t in range(steps):
        u, mem, sol = filter_step(x, seq[t], mem, problem)
        applied.append(u)
        J.append(sol.J_star)
        s.append(sol.first_stage_cost)
        x = problem.dynamics(x, u)
    u_tt = applied[fx.t_tilde]

    profile = certificate_profile(fx.state, problem, grid)
    fixed_q = AdmissibleSetQuery(fx.state, fx.memory.J_prev, fx.memory.s_prev, sch.rho_bar, grid, problem)
    fixed = admissible_input_set(fixed_q, profile=profile)
    k = np.argmin(np.linalg.norm(grid.points() - v, axis=1))
    on_grid = np.linalg.norm(grid.points()[k] - v) < 1e-9
    outside = bool(on_grid and not fixed.mask[k])

    # fixed-rate filter from the same prefix, asked to apply v
    _, _, fsol = filter_step(fx.state, v, fx.memory, problem, rho=sch.rho_bar)
    # after t~ the input is zero, so the tail bound applies from t~ on
    lhs = (1.0 - sch.rho_bar) * float(np.sum(s[fx.t_tilde + 1 :]))
    tail_ok = lhs <= J[fx.t_tilde] + 1e-6
    matches = bool(np.max(np.abs(u_tt - v)) <= tol)
    rho_v = psi(float(np.linalg.norm(v)), sch)
    res2 = grid.resolution**2
    return SeparationReport(
        t_tilde=fx.t_tilde,
        witness=v.tolist(),
        rho_sch=rho_v,
        applied_at_t_tilde=u_tt.tolist(),
        applied_matches_witness=matches,
        outside_fixed_set=outside,
        psi_above_rho_bar=rho_v > sch.rho_bar,
        fixed_objective=fsol.objective,
        fixed_objective_exceeds_grid=fsol.objective > res2,
        tail_ok=bool(tail_ok),
        separated=bool(matches and outside and rho_v > sch.rho_bar and fsol.objective > res2),
    )


def write_report(obj, path):
    """JSON report; dataclasses and numpy values are converted."""

    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        if hasattr(o, "to_dict"):
            return o.to_dict()
        raise TypeError(type(o))

    Path(path).write_text(json.dumps(obj, indent=2, default=default))
