"""Quadratic stage cost, horizon certificate and terminal ingredients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NotPositiveDefinite(ValueError):
    pass


def _sym(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    return M


@dataclass(frozen=True)
class StageCost:
    """``s(x, u) = x'Qx + u'Ru`` with ``Q >= 0`` and ``R > 0``."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = _sym(self.Q, "Q")
        R = _sym(self.R, "R")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise NotPositiveDefinite("Q is not positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise NotPositiveDefinite("R is not positive definite")
        Q.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def m(self):
        return self.R.shape[0]


def default_stage_cost() -> StageCost:
    return StageCost(np.diag([5.0, 0.5]), np.array([[0.1]]))


@dataclass(frozen=True)
class TerminalIngredients:
    """Terminal equality at the origin: ``Z_f = {0}``, ``m = 0``, ``kappa = 0``.

    This is the only terminal mode supported.  Both conditions of the
    terminal assumption hold trivially because ``f(0, 0) = 0``.
    """

    kind: str = "equality-at-origin"

    def __post_init__(self):
        if self.kind != "equality-at-origin":
            raise ValueError(f"unsupported terminal mode {self.kind!r}")

    def cost(self, x):
        return 0.0

    def control_law(self, x, m):
        return np.zeros(m)


@dataclass
class TrajectoryPlan:
    states: np.ndarray  # (N + 1, n)
    inputs: np.ndarray  # (N, m)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if self.inputs.shape[0] < 1:
            raise ValueError("horizon must be at least 1")
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ValueError(
                f"{self.states.shape[0]} states do not match {self.inputs.shape[0]} inputs"
            )

    @property
    def horizon(self):
        return self.inputs.shape[0]

    def copy(self):
        return TrajectoryPlan(self.states.copy(), self.inputs.copy())

    @classmethod
    def zeros(cls, N, n, m):
        return cls(np.zeros((N + 1, n)), np.zeros((N, m)))


def stage_cost(x, u, c: StageCost):
    """Quadratic stage cost; accepts batched ``x`` (..., n) and ``u`` (..., m)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != c.n or u.shape[-1] != c.m:
        raise ValueError(
            f"dimension mismatch: x has {x.shape[-1]} (Q is {c.n}), u has {u.shape[-1]} (R is {c.m})"
        )
    return np.einsum("...i,ij,...j->...", x, c.Q, x) + np.einsum(
        "...i,ij,...j->...", u, c.R, u
    )


def certificate_value(plan: TrajectoryPlan, c: StageCost, terminal: TerminalIngredients = TerminalIngredients()):
    """Sum of stage costs over the horizon plus the terminal cost."""
    return float(
        np.sum(stage_cost(plan.states[:-1], plan.inputs, c)) + terminal.cost(plan.states[-1])
    )


def lower_bound_constants(c: StageCost):
    """Smallest eigenvalues ``(q_x, q_u)`` so that ``s(x,u) >= q_x|x|^2 + q_u|u|^2``."""
    q_x = float(np.linalg.eigvalsh(c.Q)[0])
    q_u = float(np.linalg.eigvalsh(c.R)[0])
    if q_x <= 0:
        raise NotPositiveDefinite(f"Q is not positive definite (min eigenvalue {q_x:.3g})")
    if q_u <= 0:
        raise NotPositiveDefinite(f"R is not positive definite (min eigenvalue {q_u:.3g})")
    return q_x, q_u
