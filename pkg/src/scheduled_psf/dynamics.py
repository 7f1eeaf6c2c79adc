"""Discrete-time system models used by the safety filter.

Every step map accepts batched arrays: ``state`` of shape ``(..., n)`` and
``input`` of shape ``(..., m)``.  This lets the solver evaluate a whole
horizon (and all finite-difference perturbations) in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 0.2
    length: float = 0.5
    damping: float = 0.02
    gravity: float = 9.81
    dt: float = 0.05

    def __post_init__(self):
        if self.mass <= 0 or self.length <= 0:
            raise ValueError("mass and length must be positive")
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class DiscreteDynamics:
    """A deterministic map ``x+ = f(x, u)`` with fixed dimensions.

    ``jacobian`` is optional; when absent, :func:`linearize` falls back to
    central finite differences.
    """

    n: int
    m: int
    step: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray, np.ndarray], tuple]] = None
    name: str = "system"

    def __call__(self, state, input):
        return self.step(np.asarray(state, dtype=float), np.asarray(input, dtype=float))


def pendulum_derivative(state, input, params: PendulumParams = PendulumParams()):
    """Continuous-time pendulum vector field ``[theta_dot, omega_dot]``.

    ``theta = 0`` is the upright (unstable) equilibrium.
    """
    state = np.asarray(state, dtype=float)
    input = np.asarray(input, dtype=float)
    theta = state[..., 0]
    omega = state[..., 1]
    ml2 = params.mass * params.length**2
    domega = (
        -(params.gravity / params.length) * np.sin(theta)
        - (params.damping / ml2) * omega
        + input[..., 0] / ml2
    )
    return np.stack([omega, domega], axis=-1)


def rk4_step(state, input, params: PendulumParams = PendulumParams()):
    """One classical Runge-Kutta 4 step with the input held over ``dt``."""
    state = np.asarray(state, dtype=float)
    h = params.dt
    k1 = pendulum_derivative(state, input, params)
    k2 = pendulum_derivative(state + 0.5 * h * k1, input, params)
    k3 = pendulum_derivative(state + 0.5 * h * k2, input, params)
    k4 = pendulum_derivative(state + h * k3, input, params)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def pendulum(params: PendulumParams = PendulumParams()) -> DiscreteDynamics:
    return DiscreteDynamics(
        n=2, m=1, step=lambda x, u: rk4_step(x, u, params), name="pendulum"
    )


def linear_system(A, B, name="linear") -> DiscreteDynamics:
    """Wrap ``x+ = A x + B u`` with exact Jacobians."""
    A = np.array(A, dtype=float)
    B = np.array(B, dtype=float)
    A.setflags(write=False)
    B.setflags(write=False)

    def step(x, u):
        return x @ A.T + u @ B.T

    def jac(x, u):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        return (
            np.broadcast_to(A, shape + A.shape),
            np.broadcast_to(B, shape + B.shape),
        )

    return DiscreteDynamics(n=A.shape[0], m=B.shape[1], step=step, jacobian=jac, name=name)


def double_integrator() -> DiscreteDynamics:
    """Unit-sampled double integrator, the small exhaustive-enumeration system."""
    return linear_system([[1.0, 1.0], [0.0, 1.0]], [[0.0], [1.0]], name="double_integrator")


def fd_step(value):
    return 1e-5 * (1.0 + np.abs(value))


def linearize(dyn: DiscreteDynamics, state, input):
    """Jacobians ``(A, B) = (df/dx, df/du)`` at one or many points.

    Uses the analytic Jacobian when the model provides one, otherwise
    central differences with step ``1e-5 * (1 + |value|)``.  Batched inputs
    of shape ``(k, n)``/``(k, m)`` return ``(k, n, n)``/``(k, n, m)``.
    """
    state = np.asarray(state, dtype=float)
    input = np.asarray(input, dtype=float)
    if dyn.jacobian is not None:
        A, B = dyn.jacobian(state, input)
        return np.array(A), np.array(B)
    return fd_jacobians(dyn, state, input)


def fd_jacobians(dyn: DiscreteDynamics, state, input):
    state = np.asarray(state, dtype=float)
    input = np.asarray(input, dtype=float)
    n, m = dyn.n, dyn.m
    z = np.concatenate([state, input], axis=-1)
    batch = z.shape[:-1]
    h = fd_step(z)
    # all 2*(n+m) perturbations evaluated in one batched call
    eye = np.eye(n + m)
    dz = eye * h[..., None, :]
    zp = z[..., None, :] + dz
    zm = z[..., None, :] - dz
    zz = np.concatenate([zp, zm], axis=-2)
    out = dyn.step(zz[..., :n], zz[..., n:])
    fp, fm = out[..., : n + m, :], out[..., n + m :, :]
    J = (fp - fm) / (2.0 * h[..., :, None])
    J = np.swapaxes(J, -1, -2)
    return J[..., :, :n].reshape(batch + (n, n)), J[..., :, n:].reshape(batch + (n, m))
