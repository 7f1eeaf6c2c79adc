"""Dense strictly convex QP solver (Goldfarb-Idnani dual active set).

Solves::

    minimize    0.5 x'Gx + a'x
    subject to  C_eq x  = d_eq
                C_in x <= d_in

The dual method starts from the unconstrained minimiser, so it needs no
feasible initial point and detects infeasibility exactly when a violated
constraint cannot be added.  Problems here are small (tens of variables),
so the active-set factorisation is recomputed from scratch on every pivot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, qr, solve_triangular


@dataclass
class QPResult:
    x: np.ndarray
    lam_eq: np.ndarray
    lam_in: np.ndarray
    status: str  # "optimal" | "infeasible" | "max-pivots"
    pivots: int
    active: list

    @property
    def ok(self):
        return self.status == "optimal"


class _ActiveSet:
    def __init__(self, Jmat):
        self.Jmat = Jmat
        self.n = Jmat.shape[0]
        self.cols = []
        self.factor()

    def factor(self):
        q = len(self.cols)
        if q == 0:
            self.Q = np.eye(self.n)
            self.R = np.zeros((0, 0))
            return
        M = self.Jmat.T @ np.column_stack(self.cols)
        Q, R = qr(M, mode="full")
        self.Q, self.R = Q, R[:q, :q]

    def directions(self, normal):
        q = len(self.cols)
        d = self.Q.T @ (self.Jmat.T @ normal)
        z = self.Jmat @ (self.Q[:, q:] @ d[q:])
        r = solve_triangular(self.R, d[:q]) if q else np.zeros(0)
        return z, r


def solve_qp(G, a, C_eq=None, d_eq=None, C_in=None, d_in=None, max_pivots=100, tol=1e-11):
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    nv = a.size
    C_eq = np.zeros((0, nv)) if C_eq is None else np.atleast_2d(np.asarray(C_eq, dtype=float))
    d_eq = np.zeros(0) if d_eq is None else np.atleast_1d(np.asarray(d_eq, dtype=float))
    C_in = np.zeros((0, nv)) if C_in is None else np.atleast_2d(np.asarray(C_in, dtype=float))
    d_in = np.zeros(0) if d_in is None else np.atleast_1d(np.asarray(d_in, dtype=float))
    n_eq, n_in = C_eq.shape[0], C_in.shape[0]

    L, _ = cho_factor(G, lower=True)
    L = np.tril(L)
    Jmat = solve_triangular(L, np.eye(nv), lower=True).T  # G^-1 = J J'
    x = -(Jmat @ (Jmat.T @ a))

    # constraints in the >= form n'x >= b; rows 0..n_eq-1 are equalities
    Nrm = np.vstack([C_eq, -C_in])
    b = np.concatenate([d_eq, -d_in])
    sign = np.ones(n_eq + n_in)
    scale = np.maximum(np.linalg.norm(Nrm, axis=1), 1e-300)

    act = _ActiveSet(Jmat)
    ids, u = [], []
    pivots = 0

    def result(status):
        lam_eq = np.zeros(n_eq)
        lam_in = np.zeros(n_in)
        for j, uj in zip(ids, u):
            if j < n_eq:
                lam_eq[j] = -sign[j] * uj
            else:
                lam_in[j - n_eq] = uj
        return QPResult(x, lam_eq, lam_in, status, pivots, [j - n_eq for j in ids if j >= n_eq])

    def add_constraint(p, is_eq):
        # one "step 2" of the dual method: make constraint p active
        nonlocal x, pivots
        normal = sign[p] * Nrm[p]
        bp = sign[p] * b[p]
        up = 0.0
        while True:
            if pivots >= max_pivots:
                return "max-pivots"
            slack = normal @ x - bp
            z, r = act.directions(normal)
            t1, k = np.inf, -1
            for i, (j, rj) in enumerate(zip(ids, r)):
                if j >= n_eq and rj > tol and u[i] / rj < t1:
                    t1, k = u[i] / rj, i
            zn = z @ normal
            t2 = -slack / zn if zn > tol * scale[p] ** 2 else np.inf
            if not np.isfinite(t1) and not np.isfinite(t2):
                if is_eq and abs(slack) <= 1e3 * tol * scale[p]:
                    return "skip"
                return "infeasible"
            t = min(t1, t2)
            if np.isfinite(t2):
                x = x + t * z
            for i in range(len(u)):
                u[i] -= t * r[i]
            up += t
            pivots += 1
            if t2 <= t1:
                ids.append(p)
                u.append(up)
                act.cols.append(normal)
                act.factor()
                return "added"
            del ids[k], u[k], act.cols[k]
            act.factor()

    for p in range(n_eq):
        if Nrm[p] @ x - b[p] > 0:
            sign[p] = -1.0
        st = add_constraint(p, True)
        if st in ("infeasible", "max-pivots"):
            return result(st)

    while True:
        if n_in == 0:
            return result("optimal")
        slack = (Nrm[n_eq:] @ x - b[n_eq:]) / scale[n_eq:]
        if ids:
            slack[[j - n_eq for j in ids if j >= n_eq]] = np.inf
        p = int(np.argmin(slack))
        if slack[p] >= -tol * (1.0 + np.abs(b[n_eq + p]) / scale[n_eq + p]):
            return result("optimal")
        st = add_constraint(n_eq + p, False)
        if st != "added":
            return result(st)
